"""Shared basis, commutative column keys and row permutation keys.

Every agency derives its column key as a polynomial in the same basis matrix
``B0`` (no constant term), so any two keys commute.  ``B0`` is built from a
chosen spectrum, ``B0 = Q diag(lam) Q^-1``, which guarantees distinct
eigenvalues without running an eigensolver and lets key invertibility be
checked on scalars: ``f(B0)`` is singular iff ``f(lam) = 0`` for some ``lam``.

Large feature counts use a block-diagonal basis; each block carries its own
polynomial of degree equal to the block size.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.linalg

from privlogit.linalg import PermutationKey, as_matrix, solve

KEY_FILE_VERSION = 1
DEFAULT_BLOCK_SIZE = 32
INVERTIBILITY_FLOOR = 1e-8
Q_COND_LIMIT = 100.0
DEFAULT_MAX_SPREAD = 5.0

SeedLike = int | np.random.Generator | np.random.SeedSequence | Sequence[int]


class ConfigurationError(ValueError):
    pass


class KeyGenerationError(RuntimeError):
    pass


def _rng(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class Spectrum:
    """Eigenvalue magnitudes lie in ``[min_mag, max_mag]``, pairwise ``min_gap`` apart."""

    min_mag: float = 0.9
    max_mag: float = 1.1
    min_gap: float = 0.01

    def __post_init__(self):
        if not 0 < self.min_mag < self.max_mag:
            raise ConfigurationError("need 0 < min_mag < max_mag")
        if self.min_gap <= 0:
            raise ConfigurationError("min_gap must be positive")

    @property
    def per_sign_capacity(self) -> int:
        return int(math.floor((self.max_mag - self.min_mag) / self.min_gap + 1e-9)) + 1

    @property
    def both_signs(self) -> bool:
        # a positive and a negative eigenvalue are at least 2*min_mag apart
        return 2 * self.min_mag >= self.min_gap

    @property
    def capacity(self) -> int:
        return self.per_sign_capacity * (2 if self.both_signs else 1)


def _place(k: int, spectrum: Spectrum, rng: np.random.Generator) -> np.ndarray:
    """k magnitudes in range with consecutive gaps >= min_gap (uniform over such sets)."""
    if k == 0:
        return np.empty(0)
    slack = (spectrum.max_mag - spectrum.min_mag) - (k - 1) * spectrum.min_gap
    u = np.sort(rng.uniform(0.0, slack, size=k))
    return spectrum.min_mag + u + spectrum.min_gap * np.arange(k)


def draw_eigenvalues(m: int, spectrum: Spectrum, rng: np.random.Generator) -> np.ndarray:
    if m > spectrum.capacity:
        raise ConfigurationError(
            f"cannot place {m} eigenvalues with gap {spectrum.min_gap} in "
            f"[{spectrum.min_mag}, {spectrum.max_mag}] (capacity {spectrum.capacity})"
        )
    cap = spectrum.per_sign_capacity
    if spectrum.both_signs:
        n_neg = int(rng.integers(0, 2, size=m).sum())
        n_neg = min(max(n_neg, m - cap), cap)
    else:
        n_neg = 0
    values = np.concatenate([_place(m - n_neg, spectrum, rng), -_place(n_neg, spectrum, rng)])
    return rng.permutation(values)


@dataclass(frozen=True, eq=False)
class BasisBlock:
    """One diagonal block of ``B0``.

    ``eigenvalues``, ``q`` and ``q_inv`` are known for spectrally generated
    blocks and ``None`` for a matrix supplied from outside.
    """

    matrix: np.ndarray
    eigenvalues: np.ndarray | None = None
    q: np.ndarray | None = None
    q_inv: np.ndarray | None = None

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    @property
    def spectral(self) -> bool:
        return self.eigenvalues is not None

    @property
    def q_cond(self) -> float:
        return float(np.linalg.cond(self.q)) if self.q is not None else float("nan")


@dataclass(frozen=True, eq=False)
class Basis:
    blocks: tuple[BasisBlock, ...]
    seed: int | None = None
    spectrum: Spectrum | None = None
    block_size: int | None = None

    @property
    def p(self) -> int:
        return sum(b.size for b in self.blocks)

    @property
    def offsets(self) -> list[int]:
        return list(np.cumsum([0] + [b.size for b in self.blocks[:-1]]))

    @property
    def eigenvalues(self) -> list[np.ndarray] | None:
        if not all(b.spectral for b in self.blocks):
            return None
        return [b.eigenvalues for b in self.blocks]

    def matrix(self) -> np.ndarray:
        return scipy.linalg.block_diag(*[b.matrix for b in self.blocks])

    @classmethod
    def from_matrix(cls, b0) -> Basis:
        """Wrap an externally chosen ``B0`` as a single block without spectral data."""
        b0 = as_matrix(b0, "B0")
        if b0.shape[0] != b0.shape[1]:
            raise ConfigurationError("B0 must be square")
        return cls(blocks=(BasisBlock(matrix=b0),), block_size=b0.shape[0])


def block_sizes(p: int, block_size: int) -> list[int]:
    sizes = [block_size] * (p // block_size)
    if p % block_size:
        sizes.append(p % block_size)
    return sizes


def gen_basis(
    p: int,
    block_size: int = DEFAULT_BLOCK_SIZE,
    seed: int = 0,
    spectrum: Spectrum = Spectrum(),
) -> Basis:
    """Build a (block-diagonal) ``B0`` with distinct, well-separated eigenvalues.

    ``block_size`` larger than ``p`` is clipped to ``p``.
    """
    if p < 1:
        raise ConfigurationError("p must be at least 1")
    if block_size < 1:
        raise ConfigurationError("block_size must be at least 1")
    block_size = min(block_size, p)
    rng = np.random.default_rng(seed)
    blocks = []
    for m in block_sizes(p, block_size):
        lam = draw_eigenvalues(m, spectrum, rng)
        for _ in range(1000):
            q = rng.standard_normal((m, m))
            if np.linalg.cond(q) < Q_COND_LIMIT:
                break
        else:
            raise KeyGenerationError("could not draw a well-conditioned eigenvector matrix")
        q_inv = solve(q, np.eye(m))
        blocks.append(BasisBlock(matrix=(q * lam) @ q_inv, eigenvalues=lam, q=q, q_inv=q_inv))
    return Basis(blocks=tuple(blocks), seed=seed, spectrum=spectrum, block_size=block_size)


def gen_gaussian_basis(p: int, sigma: float, seed: SeedLike) -> np.ndarray:
    """p x p matrix with i.i.d. N(0, sigma^2) entries (no spectral guarantees)."""
    if sigma <= 0:
        raise ConfigurationError("sigma must be positive")
    return sigma * _rng(seed).standard_normal((p, p))


def horner(b0: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
    """Evaluate ``sum_j coeffs[j-1] * b0**j`` with ``len(coeffs)`` matrix products."""
    m = b0.shape[0]
    acc = coeffs[-1] * np.eye(m)
    for c in coeffs[-2::-1]:
        acc = b0 @ acc
        acc[np.diag_indices(m)] += c
    return b0 @ acc


def key_polynomial(coeffs: np.ndarray, t) -> np.ndarray:
    """Scalar ``f(t) = sum_j coeffs[j-1] t**j``."""
    return np.polynomial.polynomial.polyval(t, np.concatenate([[0.0], coeffs]))


@dataclass(frozen=True, eq=False)
class CommutativeKey:
    coeffs: tuple[np.ndarray, ...]
    materialized: np.ndarray
    cond_estimate: float

    @property
    def p(self) -> int:
        return self.materialized.shape[0]


def _condition_estimate(basis: Basis, coeffs: Sequence[np.ndarray], mat: np.ndarray) -> float:
    """Upper bound ``max cond(Q)^2 * max|f(lam)| / min|f(lam)|`` on the 2-norm condition."""
    if basis.eigenvalues is None:
        return float(np.linalg.cond(mat))
    fvals = np.concatenate([np.abs(key_polynomial(c, b.eigenvalues))
                            for c, b in zip(coeffs, basis.blocks)])
    lo = float(fvals.min())
    if lo == 0.0:
        return float("inf")
    return max(b.q_cond for b in basis.blocks) ** 2 * float(fvals.max()) / lo


def key_from_coefficients(basis: Basis, coeffs: Sequence) -> CommutativeKey:
    """Materialise a key from explicit per-block coefficients.

    A flat sequence is accepted for a single-block basis.
    """
    if len(basis.blocks) == 1 and np.ndim(coeffs[0]) == 0:
        coeffs = [coeffs]
    if len(coeffs) != len(basis.blocks):
        raise ConfigurationError(f"expected {len(basis.blocks)} coefficient blocks")
    coeffs = tuple(np.asarray(c, dtype=np.float64) for c in coeffs)
    mat = scipy.linalg.block_diag(*[horner(b.matrix, c) for b, c in zip(basis.blocks, coeffs)])
    return CommutativeKey(coeffs=coeffs, materialized=mat,
                          cond_estimate=_condition_estimate(basis, coeffs, mat))


def spectral_spread(coeffs: np.ndarray, eigenvalues: np.ndarray) -> float:
    """``max|f(lam)| / min|f(lam)|`` for one block.

    This is the coefficient-dependent factor of the block's condition number;
    the rest comes from the basis eigenvectors and is shared by every key.
    """
    f = np.abs(key_polynomial(coeffs, eigenvalues))
    lo = float(f.min())
    return float(f.max()) / lo if lo > INVERTIBILITY_FLOOR else float("inf")


def gen_commutative_key(
    basis: Basis,
    seed: SeedLike,
    max_spread: float = DEFAULT_MAX_SPREAD,
    max_retries: int = 10_000,
) -> CommutativeKey:
    """Draw standard-normal coefficients per block and materialise the key.

    A block's coefficients are redrawn while ``f`` nearly vanishes on one of
    its eigenvalues or its spectral spread exceeds ``max_spread``.  Random
    polynomials have their roots clustered near the unit circle, which is
    where the default spectrum sits, so without the spread limit a product of
    several keys can lose most of the available precision.
    """
    rng = _rng(seed)
    coeffs = []
    for blk in basis.blocks:
        for _ in range(max_retries):
            c = rng.standard_normal(blk.size)
            if not blk.spectral or spectral_spread(c, blk.eigenvalues) <= max_spread:
                break
        else:
            raise KeyGenerationError(
                f"no coefficients with spread <= {max_spread} after {max_retries} draws"
            )
        coeffs.append(c)
    key = key_from_coefficients(basis, coeffs)
    if basis.eigenvalues is None and not key.cond_estimate < 1e12:
        raise KeyGenerationError("drawn key is numerically singular")
    return key


def identity_key(p: int) -> CommutativeKey:
    """The trivial key ``I``; useful for switching encryption off in tests."""
    eye = np.eye(p)
    return CommutativeKey(coeffs=(np.array([1.0]),), materialized=eye, cond_estimate=1.0)


@dataclass(frozen=True, eq=False)
class KeyBundle:
    agency_id: int
    commutative: CommutativeKey
    permutations: tuple[PermutationKey, ...]
    seed: int | None = None

    @property
    def matrix(self) -> np.ndarray:
        return self.commutative.materialized

    def permutation_for(self, agency_id: int) -> PermutationKey:
        """Row key this agency applies to data owned by ``agency_id`` (1-based)."""
        return self.permutations[agency_id - 1]

    def with_permutations(self, sample_counts: Sequence[int], seed: SeedLike) -> KeyBundle:
        """Same column key, fresh row keys (one set per cross-validation fold)."""
        return KeyBundle(self.agency_id, self.commutative,
                         _draw_permutations(sample_counts, _rng(seed)), self.seed)


def _draw_permutations(sample_counts: Sequence[int], rng: np.random.Generator):
    if any(n < 1 for n in sample_counts):
        raise ConfigurationError("every agency needs at least one sample")
    return tuple(PermutationKey.random(int(n), rng) for n in sample_counts)


def gen_key_bundle(
    agency_id: int,
    sample_counts: Sequence[int],
    basis: Basis,
    seed: int,
    max_spread: float = DEFAULT_MAX_SPREAD,
) -> KeyBundle:
    key = gen_commutative_key(basis, np.random.default_rng([seed, agency_id, 0]),
                              max_spread=max_spread)
    perms = _draw_permutations(sample_counts, np.random.default_rng([seed, agency_id, 1]))
    return KeyBundle(agency_id=agency_id, commutative=key, permutations=perms, seed=seed)


def identity_bundle(agency_id: int, p: int, sample_counts: Sequence[int]) -> KeyBundle:
    return KeyBundle(agency_id, identity_key(p),
                     tuple(PermutationKey.identity(int(n)) for n in sample_counts))


def coefficients_from_matrix(basis: Basis, key_matrix) -> list[np.ndarray]:
    """Invert materialisation through the Vandermonde system on each block.

    ``Q^-1 B Q`` is diagonal with entries ``f(lam_i)``; with distinct
    eigenvalues the Vandermonde matrix ``[lam_i**j]`` has full rank, so the
    coefficients are determined by the key.
    """
    if basis.eigenvalues is None:
        raise ConfigurationError("coefficient recovery needs a spectral basis")
    key_matrix = as_matrix(key_matrix, "key")
    out = []
    for off, blk in zip(basis.offsets, basis.blocks):
        sub = key_matrix[off:off + blk.size, off:off + blk.size]
        fvals = np.diag(blk.q_inv @ sub @ blk.q)
        vander = np.vander(blk.eigenvalues, blk.size + 1, increasing=True)[:, 1:]
        out.append(solve(vander, fvals))
    return out


# -- key files ---------------------------------------------------------------

def bundle_to_dict(bundle: KeyBundle, basis: Basis) -> dict:
    if basis.seed is None or basis.spectrum is None:
        raise ConfigurationError("only seeded spectral bases can be serialised")
    return {
        "version": KEY_FILE_VERSION,
        "agency_id": bundle.agency_id,
        "p": basis.p,
        "block_size": basis.block_size,
        "seed": basis.seed,
        "spectrum": {
            "min_mag": basis.spectrum.min_mag,
            "max_mag": basis.spectrum.max_mag,
            "min_gap": basis.spectrum.min_gap,
        },
        "eigenvalues": [lam.tolist() for lam in basis.eigenvalues],
        "coefficients": [c.tolist() for c in bundle.commutative.coeffs],
        "permutation_images": [perm.image.tolist() for perm in bundle.permutations],
    }


def bundle_from_dict(doc: dict) -> tuple[KeyBundle, Basis]:
    if doc.get("version") != KEY_FILE_VERSION:
        raise ConfigurationError(f"unsupported key file version {doc.get('version')!r}")
    basis = gen_basis(doc["p"], doc["block_size"], doc["seed"], Spectrum(**doc["spectrum"]))
    for stored, regen in zip(doc["eigenvalues"], basis.eigenvalues):
        if not np.array_equal(np.asarray(stored), regen):
            raise ConfigurationError("basis regenerated from seed does not match stored eigenvalues")
    key = key_from_coefficients(basis, doc["coefficients"])
    perms = tuple(PermutationKey(img) for img in doc["permutation_images"])
    return KeyBundle(doc["agency_id"], key, perms), basis


def save_key_bundle(path: str | Path, bundle: KeyBundle, basis: Basis) -> None:
    Path(path).write_text(json.dumps(bundle_to_dict(bundle, basis), indent=2))


def load_key_bundle(path: str | Path) -> tuple[KeyBundle, Basis]:
    return bundle_from_dict(json.loads(Path(path).read_text()))
