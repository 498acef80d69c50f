"""k-fold cross validation over the encrypted protocol.

Each agency splits its own rows into ``k`` contiguous folds.  For fold ``f``
the agencies train on everything except their fold-``f`` rows, keeping their
column keys but drawing fresh row permutations, and score the held-out rows
locally with the decrypted model.  Pooling the (score, label) pairs across
agencies is a test-bench view; no party in the protocol sees them all.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from privlogit.data import LocalDataset, stack
from privlogit.keys import ConfigurationError
from privlogit.protocol.simulation import ProtocolConfig, make_keys, run_pipeline
from privlogit.solver import FitConfig, FitResult, UndefinedAUCError, add_intercept, auc, fit, probabilities

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FoldPlan:
    k: int
    assignments: tuple[np.ndarray, ...]

    @classmethod
    def contiguous(cls, sample_counts: Sequence[int], k: int) -> FoldPlan:
        if k < 2:
            raise ConfigurationError("cross validation needs k >= 2")
        small = [n for n in sample_counts if n < k]
        if small:
            raise ConfigurationError(f"every agency needs at least k={k} rows, smallest has {min(small)}")
        return cls(k, tuple(np.arange(n) * k // n for n in sample_counts))

    def train_rows(self, agency_index: int, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments[agency_index] != fold)

    def test_rows(self, agency_index: int, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments[agency_index] == fold)


@dataclass
class FoldOutcome:
    fold: int
    encrypted: FitResult
    beta: np.ndarray
    plaintext_beta: np.ndarray | None
    scores: np.ndarray
    labels: np.ndarray
    auc: float | None
    plaintext_auc: float | None


@dataclass
class CrossValidation:
    folds: list[FoldOutcome]

    @property
    def pooled_auc(self) -> float | None:
        scores = np.concatenate([f.scores for f in self.folds])
        labels = np.concatenate([f.labels for f in self.folds])
        try:
            return auc(scores, labels)
        except UndefinedAUCError:
            return None

    @property
    def fold_aucs(self) -> list[float | None]:
        return [f.auc for f in self.folds]

    def to_dict(self) -> dict:
        return {
            "k": len(self.folds),
            "pooled_auc": self.pooled_auc,
            "folds": [
                {"fold": f.fold, "auc": f.auc, "plaintext_auc": f.plaintext_auc,
                 "iterations": f.encrypted.iterations, "converged": f.encrypted.converged,
                 "beta": f.beta.tolist()}
                for f in self.folds
            ],
        }


def _safe_auc(scores, labels) -> float | None:
    try:
        return auc(scores, labels)
    except UndefinedAUCError:
        return None


def cross_validate(
    datasets: Sequence[LocalDataset],
    k: int,
    config: ProtocolConfig,
    fit_config: FitConfig | None = None,
    *,
    plaintext: bool = True,
) -> CrossValidation:
    """Encrypted k-fold CV; with ``plaintext`` the same folds are also fitted in the clear."""
    fit_config = fit_config or FitConfig(lam=config.lam)
    plan = FoldPlan.contiguous([d.n for d in datasets], k)
    basis, bundles = make_keys(config, [d.n for d in datasets], datasets[0].p)
    outcomes = []
    for f in range(k):
        train = [d.subset(plan.train_rows(i, f)) for i, d in enumerate(datasets)]
        test = [d.subset(plan.test_rows(i, f)) for i, d in enumerate(datasets)]
        counts = [d.n for d in train]
        fold_bundles = [b.with_permutations(counts, [config.seed, f, b.agency_id]) for b in bundles]
        run = run_pipeline(config, train, fit_config, bundles=fold_bundles, basis=basis, escrow=False)
        scores = np.concatenate([probabilities(add_intercept(d.x), run.beta) for d in test])
        labels = np.concatenate([d.y for d in test])
        plain_beta = plain_auc = None
        if plaintext:
            x, y = stack(train)
            plain_beta = fit(add_intercept(x), y=y, config=fit_config).beta
            xt, _ = stack(test)
            plain_auc = _safe_auc(probabilities(add_intercept(xt), plain_beta), labels)
        fold_auc = _safe_auc(scores, labels)
        if fold_auc is None:
            log.warning("fold %d test set has a single class; AUC undefined", f)
        outcomes.append(FoldOutcome(f, run.fit, run.beta, plain_beta, scores, labels, fold_auc, plain_auc))
    return CrossValidation(outcomes)
