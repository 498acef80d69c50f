"""Pure encryption, assembly, decryption and verification steps.

These functions are what each party computes; the state machines in
:mod:`privlogit.protocol.simulation` only decide who runs which step when.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from privlogit.data import LocalDataset
from privlogit.keys import KeyBundle
from privlogit.linalg import DimensionError, SingularMatrixError, apply_permutation, solve_equilibrated


class ProtocolViolation(RuntimeError):
    def __init__(self, message: str, message_index: int | None = None):
        self.message_index = message_index
        if message_index is not None:
            message = f"{message} (message #{message_index})"
        super().__init__(message)


class VerificationUnavailable(RuntimeError):
    """The pseudo-response system is singular, so no verdict can be given."""


@dataclass(frozen=True, eq=False)
class EncryptedShare:
    """One agency's rows on their way through the encryption chain.

    ``case_count`` rides along with ``z_star`` as the leading entry of the
    padded response summary; relays leave it untouched because the padded
    key has a 1 in that position.
    """

    origin: int
    hops: tuple[int, ...]
    x_star: np.ndarray
    z_star: np.ndarray
    case_count: float

    @property
    def z_padded(self) -> np.ndarray:
        return np.concatenate([[self.case_count], self.z_star])


@dataclass(frozen=True, eq=False)
class EncryptedDataset:
    """What the server models on: intercept column prepended, padded summaries."""

    x_star: np.ndarray
    z_star: np.ndarray
    b_star: np.ndarray | None
    block_rows: tuple[tuple[int, int], ...]

    @property
    def features(self) -> np.ndarray:
        """Encrypted design without the intercept column."""
        return self.x_star[:, 1:]

    def block(self, position: int) -> np.ndarray:
        """Rows contributed by the agency at ``position`` in stacking order, no intercept."""
        a, b = self.block_rows[position]
        return self.x_star[a:b, 1:]


@dataclass(frozen=True, eq=False)
class PseudoResponse:
    y_s_star: np.ndarray
    provenance: dict[int, np.ndarray] = field(default_factory=dict)


@dataclass(frozen=True)
class VerificationReport:
    check: str
    passed: bool
    max_gap: float
    tolerance: float
    detail: str = ""

    def to_dict(self) -> dict:
        return {"check": self.check, "passed": self.passed, "max_gap": self.max_gap,
                "tolerance": self.tolerance, "detail": self.detail}


def _check_bundle(bundle: KeyBundle, p: int):
    if bundle.matrix.shape != (p, p):
        raise DimensionError(f"key of agency {bundle.agency_id} is {bundle.matrix.shape}, data has p={p}")


def encrypt_own(data: LocalDataset, bundle: KeyBundle) -> EncryptedShare:
    if bundle.agency_id != data.agency_id:
        raise ProtocolViolation(f"agency {bundle.agency_id} cannot encrypt data of agency {data.agency_id}")
    _check_bundle(bundle, data.p)
    perm = bundle.permutation_for(data.agency_id)
    if perm.size != data.n:
        raise DimensionError(f"permutation size {perm.size} does not match {data.n} rows")
    b = bundle.matrix
    x_star = apply_permutation(perm, data.x @ b)
    z_star = (data.y @ data.x) @ b
    return EncryptedShare(data.agency_id, (data.agency_id,), x_star, z_star, float(data.y.sum()))


def relay_encrypt(share: EncryptedShare, bundle: KeyBundle) -> EncryptedShare:
    if bundle.agency_id in share.hops:
        raise ProtocolViolation(
            f"agency {bundle.agency_id} already encrypted the share of agency {share.origin}"
        )
    _check_bundle(bundle, share.x_star.shape[1])
    perm = bundle.permutation_for(share.origin)
    b = bundle.matrix
    return EncryptedShare(
        share.origin,
        share.hops + (bundle.agency_id,),
        apply_permutation(perm, share.x_star @ b),
        share.z_star @ b,
        share.case_count,
    )


def accumulate_bstar(current: np.ndarray | None, bundle: KeyBundle) -> np.ndarray:
    """``B* <- B_i^T B* B_i``, starting from ``B_1^T B_1`` when ``current`` is None."""
    b = bundle.matrix
    if current is None:
        return b.T @ b
    if current.shape != b.shape:
        raise DimensionError(f"B* is {current.shape}, key is {b.shape}")
    return b.T @ current @ b


def pad_key(b: np.ndarray) -> np.ndarray:
    """``diag(1, b)``: the intercept coordinate is never encrypted."""
    p = b.shape[0]
    out = np.zeros((p + 1, p + 1))
    out[0, 0] = 1.0
    out[1:, 1:] = b
    return out


def server_assemble(
    shares: Sequence[EncryptedShare],
    b_star: np.ndarray | None,
    n_agencies: int | None = None,
) -> EncryptedDataset:
    """Stack complete shares in the given order, prepend intercepts, pad summaries."""
    if not shares:
        raise ProtocolViolation("no shares to assemble")
    k = n_agencies or len(shares)
    p = shares[0].x_star.shape[1]
    for s in shares:
        if len(s.hops) != k or sorted(s.hops) != list(range(1, k + 1)):
            raise ProtocolViolation(f"share of agency {s.origin} has incomplete chain {s.hops}")
        if s.hops[0] != s.origin:
            raise ProtocolViolation(f"share of agency {s.origin} was not encrypted by its owner first")
        if s.x_star.shape[1] != p:
            raise DimensionError("feature dimensions disagree across shares")
    x = np.vstack([s.x_star for s in shares])
    x = np.hstack([np.ones((x.shape[0], 1)), x])
    z = np.sum([s.z_padded for s in shares], axis=0)
    bounds = np.cumsum([0] + [s.x_star.shape[0] for s in shares])
    rows = tuple((int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]))
    return EncryptedDataset(x, z, None if b_star is None else pad_key(b_star), rows)


def decrypt_estimate(beta_star, bundles: Sequence[KeyBundle]) -> np.ndarray:
    """``beta = B_1 ... B_K beta*`` on the non-intercept coordinates."""
    beta = np.array(beta_star, dtype=np.float64)
    p = beta.size - 1
    for bundle in bundles:
        _check_bundle(bundle, p)
        beta[1:] = bundle.matrix @ beta[1:]
    return beta


def decrypt_step(beta_partial, bundle: KeyBundle) -> np.ndarray:
    return decrypt_estimate(beta_partial, [bundle])


def make_pseudo_response(data: LocalDataset) -> np.ndarray:
    """``X_i^T X_i 1``: a verification-only response with a known encrypted solution."""
    return data.x.T @ data.x.sum(axis=1)


def encrypt_pseudo_chain(y_s, bundles: Sequence[KeyBundle]) -> PseudoResponse:
    v = np.asarray(y_s, dtype=np.float64)
    provenance = {}
    for bundle in bundles:
        _check_bundle(bundle, v.size)
        v = bundle.matrix.T @ v
        provenance[bundle.agency_id] = v.copy()
    return PseudoResponse(v, provenance)


def server_solve_pseudo(x_star, y_s_star) -> np.ndarray:
    """``(X*^T X*)^-1 Y_s*`` on the encrypted features (no intercept column)."""
    x = np.asarray(x_star, dtype=np.float64)
    try:
        return solve_equilibrated(x.T @ x, np.asarray(y_s_star, dtype=np.float64))
    except SingularMatrixError as exc:
        raise VerificationUnavailable(f"X*^T X* is singular: {exc}") from None


def verification_tolerance(row_sums: np.ndarray, rtol: float = 1e-6) -> float:
    return rtol * (1.0 + float(np.max(np.abs(row_sums)))) if row_sums.size else rtol


def _multiset_check(name: str, values: np.ndarray, x1: np.ndarray, rtol: float) -> VerificationReport:
    w = np.asarray(x1, dtype=np.float64).sum(axis=1)
    v = np.asarray(values, dtype=np.float64).ravel()
    tau = verification_tolerance(w, rtol)
    if v.size != w.size:
        return VerificationReport(name, False, float("inf"), tau,
                                  f"{v.size} values for {w.size} rows")
    gap = float(np.max(np.abs(np.sort(v) - np.sort(w)))) if v.size else 0.0
    passed = bool(np.isfinite(gap) and gap <= tau)
    return VerificationReport(name, passed, gap, tau)


def verify_encryption(x1, x1_star, beta_s_star, rtol: float = 1e-6) -> VerificationReport:
    """Pass iff ``X1* beta_s*`` is a row permutation of the row sums of ``X1``."""
    v = np.asarray(x1_star, dtype=np.float64) @ np.asarray(beta_s_star, dtype=np.float64)
    return _multiset_check("encryption", v, x1, rtol)


def verify_decryption(intermediate, decrypt_step_vector, x1, rtol: float = 1e-6) -> VerificationReport:
    """Pass iff ``intermediate @ (B_K beta_s*)`` is a row permutation of ``X1``'s row sums."""
    beta_d = np.asarray(intermediate, dtype=np.float64) @ np.asarray(decrypt_step_vector, dtype=np.float64)
    return _multiset_check("decryption", beta_d, x1, rtol)
