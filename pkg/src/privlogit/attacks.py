"""Adversary algebra against the commutative matrix encryption.

Three attacks are modelled:

* chosen plaintext: an agency knows its own ciphertext ``X1*`` and sees it
  re-encrypted as ``A21 X1* B2``; writing ``B2 = sum_j b_j B0^j`` turns key
  recovery into the linear systems ``w_j = R u_j``, classified by rank;
* known plaintext: part of the plaintext is disclosed, either a block of rows
  (Gram-level leakage only) or a block of columns;
* collusion: all agencies but one pool their keys and every message they saw.

Attack functions only take what the adversary holds.  Arguments named
``truth`` or ``true_*`` are escrowed secrets used for scoring, never for the
attack itself.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from privlogit.data import LocalDataset
from privlogit.keys import gen_gaussian_basis
from privlogit.linalg import (
    DimensionError,
    GeneralSolution,
    PermutationKey,
    SingularMatrixError,
    apply_permutation,
    as_matrix,
    general_solution,
    inverse,
    rank,
    solve,
)
from privlogit.protocol.simulation import KeyEscrow, ProtocolConfig, run_protocol
from privlogit.protocol.wire import Kind

log = logging.getLogger(__name__)

NO_SOLUTION = "NoSolution"
UNIQUE = "Unique"
INFINITE = "Infinite"


def relative_error(estimate, truth) -> float:
    truth = np.asarray(truth, dtype=np.float64)
    diff = np.linalg.norm(np.asarray(estimate, dtype=np.float64) - truth)
    scale = np.linalg.norm(truth)
    return float(diff / scale) if scale > 0 else float(diff)


def row_matched_error(estimate, truth) -> float:
    """Relative Frobenius error after the best possible reordering of ``estimate``'s rows.

    Row order is treated as free information, so this is the score an
    adversary would get if it could undo every permutation key.
    """
    est = as_matrix(estimate, "estimate")
    tru = as_matrix(truth, "truth")
    if est.shape != tru.shape:
        raise DimensionError(f"estimate {est.shape} vs truth {tru.shape}")
    cost = ((est[:, None, :] - tru[None, :, :]) ** 2).sum(axis=2)
    rows, cols = linear_sum_assignment(cost)
    matched = np.empty_like(est)
    matched[cols] = est[rows]
    return relative_error(matched, tru)


# -- chosen plaintext ---------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CpaSystem:
    r: np.ndarray
    targets: np.ndarray
    m: int

    @property
    def p(self) -> int:
        return self.targets.shape[1]

    def structured_columns(self, j: int) -> np.ndarray:
        """Columns of ``R`` that multiply ``b_1..b_m`` in output column ``j``."""
        return self.r[:, [k * self.p + j for k in range(self.m)]]


def build_cpa_system(x1_star, observed, b0, a_guess: PermutationKey | None = None,
                     m: int | None = None) -> CpaSystem:
    """``R = A+ X1* (B0 | B0^2 | ... | B0^m)``; targets are the columns of ``observed``."""
    x1_star = as_matrix(x1_star, "x1_star")
    observed = as_matrix(observed, "observed")
    b0 = as_matrix(b0, "b0")
    n, p = x1_star.shape
    if b0.shape != (p, p):
        raise DimensionError(f"basis is {b0.shape}, ciphertext has {p} columns")
    if observed.shape != (n, p):
        raise DimensionError(f"observed re-encryption is {observed.shape}, expected {(n, p)}")
    m = p if m is None else int(m)
    if m < 1:
        raise ValueError("polynomial degree must be positive")
    a_guess = a_guess or PermutationKey.identity(n)
    left = apply_permutation(a_guess, x1_star)
    blocks, power = [], np.eye(p)
    for _ in range(m):
        power = power @ b0
        blocks.append(left @ power)
    return CpaSystem(np.hstack(blocks), observed, m)


@dataclass
class ColumnVerdict:
    column: int
    outcome: str
    rank_r: int
    rank_augmented: int
    dimension: int
    structured: GeneralSolution
    true_key_member: bool | None = None

    @property
    def structured_outcome(self) -> str:
        return _classify(self.structured)

    def to_dict(self) -> dict:
        s = self.structured
        return {
            "column": self.column,
            "outcome": self.outcome,
            "rank_r": self.rank_r,
            "rank_augmented": self.rank_augmented,
            "dimension": self.dimension,
            "structured_outcome": self.structured_outcome,
            "structured_dimension": s.dimension if s.consistent else None,
            "structured_particular": None if s.particular is None else s.particular.tolist(),
            "structured_null_basis": s.null_basis.tolist(),
            "true_key_member": self.true_key_member,
        }


@dataclass
class CpaVerdict:
    columns: list[ColumnVerdict]
    intersection: GeneralSolution
    recovered: np.ndarray | None
    recovers_true_key: bool | None = None

    @property
    def consistent_across_columns(self) -> bool:
        return self.intersection.consistent

    @property
    def outcomes(self) -> list[str]:
        return [c.outcome for c in self.columns]

    def to_dict(self) -> dict:
        return {
            "columns": [c.to_dict() for c in self.columns],
            "consistent_across_columns": self.consistent_across_columns,
            "intersection_outcome": _classify(self.intersection),
            "recovered_coefficients": None if self.recovered is None else self.recovered.tolist(),
            "recovers_true_key": self.recovers_true_key,
        }


def _classify(sol: GeneralSolution) -> str:
    if not sol.consistent:
        return NO_SOLUTION
    return UNIQUE if sol.dimension == 0 else INFINITE


def _member(a: np.ndarray, b: np.ndarray, x: np.ndarray, rtol: float = 1e-8) -> bool:
    scale = 1.0 + float(np.max(np.abs(a)) * np.max(np.abs(x)) + np.max(np.abs(b), initial=0.0))
    return bool(np.max(np.abs(a @ x - b), initial=0.0) <= rtol * scale)


def analyze_cpa(system: CpaSystem, tol: float | None = None, true_coeffs=None) -> CpaVerdict:
    """Rank-classify each ``w_j = R u_j`` and intersect the structured families.

    The structured family of column ``j`` keeps only the unknowns that the
    polynomial key places in that column (``b_k`` at index ``k*p + j``), which
    is the zero pattern of the coefficient matrix ``U``.
    """
    truth = None if true_coeffs is None else np.asarray(true_coeffs, dtype=np.float64).ravel()
    pm = system.r.shape[1]
    columns, stacked_a, stacked_b = [], [], []
    for j in range(system.p):
        w = system.targets[:, j]
        full = general_solution(system.r, w, tol)
        if not full.consistent:
            outcome = NO_SOLUTION
        elif full.rank_a == pm:
            outcome = UNIQUE
        else:
            outcome = INFINITE
        rj = system.structured_columns(j)
        structured = general_solution(rj, w, tol)
        member = None if truth is None else _member(rj, w, truth)
        columns.append(ColumnVerdict(j, outcome, full.rank_a, full.rank_augmented,
                                     full.dimension if full.consistent else 0, structured, member))
        stacked_a.append(rj)
        stacked_b.append(w)
    inter = general_solution(np.vstack(stacked_a), np.concatenate(stacked_b), tol)
    recovered = inter.particular if inter.consistent and inter.dimension == 0 else None
    hit = None
    if truth is not None:
        hit = bool(recovered is not None and np.allclose(recovered, truth, rtol=1e-6, atol=1e-8))
    return CpaVerdict(columns, inter, recovered, hit)


# -- known plaintext ----------------------------------------------------------

@dataclass
class KpaReport:
    scenario: str
    residual: np.ndarray | None
    recovery_error: float | None
    feasible: bool = True
    notes: list[str] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "feasible": self.feasible,
            "recovery_error": self.recovery_error,
            "residual_max_abs": None if self.residual is None else float(np.max(np.abs(self.residual))),
            "notes": self.notes,
            **self.extra,
        }


def kpa_scenario1(x_star, x11_known, true_x22=None) -> KpaReport:
    """Row-block disclosure: the best the adversary gets is ``X*^T X* - X11^T X11``."""
    x_star = as_matrix(x_star, "x_star")
    x11 = as_matrix(x11_known, "x11")
    if x11.shape[1] != x_star.shape[1]:
        raise DimensionError("known rows and ciphertext disagree on p")
    if rank(x11) < x11.shape[1]:
        raise ValueError("known block must have full column rank")
    delta = x_star.T @ x_star - x11.T @ x11
    err = None
    if true_x22 is not None:
        x22 = as_matrix(true_x22, "x22")
        err = relative_error(delta, x22.T @ x22)
    return KpaReport("I", delta, err, notes=[
        "any orthogonal transform of the hidden rows matches this Gram residual"])


def kpa_scenario2(x_star, n_known_columns: int, x11_known, true_x22=None) -> KpaReport:
    """Column-block disclosure: ``X22_hat = Z22* (Z11*)^-1 X11``."""
    x_star = as_matrix(x_star, "x_star")
    x11 = as_matrix(x11_known, "x11")
    q = int(n_known_columns)
    z11, z22 = x_star[:, :q], x_star[:, q:]
    if z11.shape[0] != z11.shape[1]:
        return KpaReport("II", None, None, False, [f"Z11* is {z11.shape}, not square: attack infeasible"])
    if z22.shape[1] != z11.shape[0]:
        return KpaReport("II", None, None, False,
                         [f"Z22* has {z22.shape[1]} columns; the estimate needs {z11.shape[0]}"])
    if x11.shape != z11.shape:
        raise DimensionError(f"known block is {x11.shape}, expected {z11.shape}")
    try:
        x22_hat = z22 @ solve(z11, x11)
    except SingularMatrixError:
        return KpaReport("II", None, None, False, ["Z11* is singular: attack infeasible"])
    err = None
    extra = {}
    if true_x22 is not None:
        x22 = as_matrix(true_x22, "x22")
        err = relative_error(x22_hat, x22)
        extra["row_matched_error"] = row_matched_error(x22_hat, x22)
    return KpaReport("II", x22_hat - (0 if true_x22 is None else x22), err, extra=extra)


def separate_key_estimate(x11, x22, a: PermutationKey, b1, b2) -> dict:
    """Scenario II when the two column blocks use unmixed keys ``B1`` and ``B2``.

    Returns the estimate computed directly from the ciphertext and the closed
    form ``A X22 B2 B1^-1 X11^-1 A^-1 X11``; they agree, and both still carry
    ``A`` and ``B2``.
    """
    x11, x22 = as_matrix(x11), as_matrix(x22)
    b1, b2 = as_matrix(b1), as_matrix(b2)
    z11 = apply_permutation(a, x11 @ b1)
    z22 = apply_permutation(a, x22 @ b2)
    direct = z22 @ solve(z11, x11)
    a_mat = a.as_matrix()
    closed = a_mat @ x22 @ b2 @ inverse(b1) @ inverse(x11) @ a_mat.T @ x11
    return {"direct": direct, "closed_form": closed,
            "recovery_error": relative_error(direct, x22)}


@dataclass
class SigmaScaling:
    sigmas: np.ndarray
    magnitudes: np.ndarray
    slope: float
    intercept: float

    def to_dict(self) -> dict:
        return {"sigmas": self.sigmas.tolist(), "magnitudes": self.magnitudes.tolist(),
                "slope": self.slope, "intercept": self.intercept}


def sigma_scaling_experiment(x, sigmas: Sequence[float], trials: int = 100, seed: int = 0) -> SigmaScaling:
    """Mean max-abs entry of ``B0^T X^T X B0`` for Gaussian ``B0`` versus ``sigma``, on log-log axes."""
    x = as_matrix(x, "x")
    sigmas = np.asarray(sigmas, dtype=np.float64)
    if sigmas.size < 2:
        raise ValueError("need at least two sigma values")
    if np.any(sigmas <= 0):
        raise ValueError("sigmas must be positive")
    if trials < 1:
        raise ValueError("need at least one trial")
    if not np.any(x):
        raise ValueError("x is all zeros")
    gram = x.T @ x
    p = x.shape[1]
    mags = np.empty(sigmas.size)
    for i, s in enumerate(sigmas):
        vals = []
        for t in range(trials):
            b0 = gen_gaussian_basis(p, float(s), [seed, i, t])
            vals.append(np.max(np.abs(b0.T @ gram @ b0)))
        mags[i] = np.mean(vals)
    slope, intercept = np.polyfit(np.log(sigmas), np.log(mags), 1)
    return SigmaScaling(sigmas, mags, float(slope), float(intercept))


# -- collusion ----------------------------------------------------------------

@dataclass
class CollusionReport:
    target: int
    compromised: tuple[int, ...]
    residual_hops: tuple[int, ...]
    estimate: np.ndarray
    error: float
    row_matched_error: float

    def to_dict(self) -> dict:
        return {"target": self.target, "compromised": list(self.compromised),
                "residual_hops": list(self.residual_hops), "error": self.error,
                "row_matched_error": self.row_matched_error}


def strip_hops(matrix, hops: Sequence[int], bundles: dict, origin: int):
    """Undo the trailing hops whose keys are in ``bundles``; returns (matrix, remaining hops)."""
    m = np.array(matrix, dtype=np.float64)
    hops = list(hops)
    while hops and hops[-1] in bundles:
        b = bundles[hops.pop()]
        m = apply_permutation(b.permutation_for(origin), m, inverse=True)
        m = solve(b.matrix.T, m.T).T
    return m, tuple(hops)


def collusion_attack(view, coalition_bundles: dict, target: int):
    """Best reconstruction of the target's rows from a coalition's messages and keys.

    Among the target's shares the coalition saw, the one with the fewest
    foreign hops left after stripping is kept; remaining keys are guessed as
    identity.
    """
    best = None
    for msg in view:
        if msg.kind != Kind.SHARE_X or msg.origin != target:
            continue
        m, rest = strip_hops(msg.matrix, msg.hops, coalition_bundles, target)
        if best is None or len(rest) < len(best[1]):
            best = (m, rest)
    if best is None:
        raise ValueError(f"coalition never saw data of agency {target}")
    return best


def collusion_harness(
    datasets: Sequence[LocalDataset],
    compromised: Sequence[int] | None = None,
    target: int = 1,
    seed: int = 0,
    block_size: int = 32,
) -> CollusionReport:
    k = len(datasets)
    compromised = tuple(sorted(range(2, k + 1) if compromised is None else compromised))
    config = ProtocolConfig(k, seed=seed, block_size=block_size, keep_payloads=True)
    result = run_protocol(config, datasets)
    escrow: KeyEscrow = result.escrow
    # the coalition's own keys; the target's stay in escrow
    coalition = {i: escrow.bundle(i) for i in compromised}
    view = result.transcript.messages_for(compromised)
    estimate, rest = collusion_attack(view, coalition, target)
    truth = datasets[target - 1].x
    return CollusionReport(target, compromised, rest, estimate,
                           relative_error(estimate, truth), row_matched_error(estimate, truth))
