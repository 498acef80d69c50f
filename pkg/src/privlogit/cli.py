"""Command-line driver: fit, cv, verify, attack and bench.

Every command writes a JSON report (``--report``) and, where phases are timed,
a long-format CSV table next to it.  Exit codes: 0 success, 1 a verification or
parity check failed, 2 bad usage, 3 a phase raised an error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from privlogit import attacks
from privlogit.crossval import cross_validate
from privlogit.data import LocalDataset, ingest_csv, split_agencies, stack, synthetic
from privlogit.keys import Basis, gen_basis, gen_commutative_key, key_from_coefficients
from privlogit.linalg import PermutationKey, apply_permutation, solve
from privlogit.protocol import ProtocolConfig, run_pipeline
from privlogit.solver import FitConfig, UndefinedAUCError, add_intercept, auc, fit, probabilities

log = logging.getLogger("privlogit")

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_PHASE_ERROR = 3

PARITY_TOL = 1e-8
AUC_PARITY_TOL = 1e-10


class PhaseError(RuntimeError):
    def __init__(self, phase: str, exc: Exception):
        self.phase = phase
        super().__init__(f"{phase}: {type(exc).__name__}: {exc}")


class _Phase:
    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, et, exc, tb):
        if exc is not None and not isinstance(exc, PhaseError) and isinstance(exc, Exception):
            raise PhaseError(self.name, exc) from exc
        return False


@dataclass
class RunConfig:
    command: str
    agencies: int = 1
    lam: float = 0.0
    folds: int = 5
    block_size: int = 32
    seed: int = 0
    tol: float = 1e-8
    max_iters: int = 50
    dataset: str | None = None
    label: str | None = None
    synthetic: tuple[int, int, int] | None = None
    split: tuple[float, ...] | None = None
    shuffle: bool = False
    escrow: bool = False
    tamper: str | None = None
    identity_keys: bool = False
    report: str | None = None
    sweep: tuple[int, ...] | None = None
    attacks: tuple[str, ...] = ()

    def __post_init__(self):
        if self.agencies < 1:
            raise ValueError("--agencies must be at least 1")
        if self.split is not None:
            if len(self.split) != self.agencies:
                raise ValueError("--split needs one proportion per agency")
            if abs(sum(self.split) - 1.0) > 1e-9:
                raise ValueError("--split proportions must sum to 1")

    def protocol(self, k: int | None = None) -> ProtocolConfig:
        return ProtocolConfig(k or self.agencies, lam=self.lam, block_size=self.block_size,
                              seed=self.seed, tamper=self.tamper, identity_keys=self.identity_keys)

    def fit_config(self) -> FitConfig:
        return FitConfig(lam=self.lam, max_iters=self.max_iters, tol=self.tol)


@dataclass
class RunReport:
    config: dict
    timings_ms: dict = field(default_factory=dict)
    iterations: int | None = None
    converged: bool | None = None
    auc_train: dict = field(default_factory=dict)
    auc_test: dict = field(default_factory=dict)
    verification: list = field(default_factory=list)
    parity: dict | None = None
    escrow_accesses: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def failed(self) -> bool:
        if any(not v["passed"] for v in self.verification):
            return True
        return self.parity is not None and not self.parity["passed"]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["status"] = "fail" if self.failed else "ok"
        return d


def _csv_floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.split(",") if t.strip())


def _csv_ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.split(",") if t.strip())


def _synthetic_arg(text: str) -> tuple[int, int, int]:
    parts = _csv_ints(text)
    if len(parts) == 2:
        parts = parts + (0,)
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("--synthetic takes n,p[,beta-seed]")
    return parts


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    src = common.add_argument_group("data")
    src.add_argument("--dataset", help="numeric CSV, one row per sample")
    src.add_argument("--label", help="label column name or 0-based index (default: last column)")
    src.add_argument("--synthetic", type=_synthetic_arg, metavar="N,P[,SEED]",
                     help="generate Gaussian features with a logistic ground truth")
    src.add_argument("--agencies", "-K", type=int, default=1)
    src.add_argument("--split", type=_csv_floats, metavar="P1,...,PK",
                     help="row proportions per agency (default: equal contiguous blocks)")
    src.add_argument("--shuffle", action="store_true", help="shuffle rows before splitting")
    model = common.add_argument_group("model")
    model.add_argument("--lambda", dest="lam", type=float, default=0.0)
    model.add_argument("--tol", type=float, default=1e-8)
    model.add_argument("--max-iters", type=int, default=50)
    model.add_argument("--folds", type=int, default=5)
    keys = common.add_argument_group("keys")
    keys.add_argument("--block-size", type=int, default=32)
    keys.add_argument("--seed", type=int, default=0)
    keys.add_argument("--identity-keys", action="store_true", help="disable encryption (testing aid)")
    run = common.add_argument_group("run")
    run.add_argument("--escrow", action="store_true",
                     help="test-only key escrow: check results against plaintext oracles")
    run.add_argument("--tamper", choices=("encrypt", "decrypt"))
    run.add_argument("--report", metavar="PATH", help="write the JSON report here")
    run.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(prog="privlogit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("fit", parents=[common], help="encrypted fit, decrypted estimate, train AUC")
    sub.add_parser("cv", parents=[common], help="encrypted k-fold cross validation")
    sub.add_parser("verify", parents=[common], help="fit plus both verification checks")
    att = sub.add_parser("attack", parents=[common], help="run the attack experiments")
    att.add_argument("--which", default="cpa,kpa,sigma,collusion",
                     help="comma-separated subset of cpa,kpa,sigma,collusion")
    bench = sub.add_parser("bench", parents=[common], help="time the three protocol phases")
    bench.add_argument("--sweep", type=_csv_ints, metavar="K1,K2,...",
                       help="agency counts to time (default: --agencies)")
    return parser


def config_from_args(args) -> RunConfig:
    return RunConfig(
        command=args.command, agencies=args.agencies, lam=args.lam, folds=args.folds,
        block_size=args.block_size, seed=args.seed, tol=args.tol, max_iters=args.max_iters,
        dataset=args.dataset, label=args.label, synthetic=args.synthetic, split=args.split,
        shuffle=args.shuffle, escrow=args.escrow, tamper=args.tamper,
        identity_keys=args.identity_keys, report=args.report,
        sweep=getattr(args, "sweep", None),
        attacks=tuple(t.strip() for t in getattr(args, "which", "").split(",") if t.strip()),
    )


def load_data(cfg: RunConfig) -> tuple[np.ndarray, np.ndarray]:
    if (cfg.dataset is None) == (cfg.synthetic is None):
        raise ValueError("give exactly one of --dataset or --synthetic")
    if cfg.dataset is not None:
        label = cfg.label
        if label is not None and label.lstrip("-").isdigit():
            label = int(label)
        x, y, _ = ingest_csv(cfg.dataset, label)
        return x, y
    n, p, beta_seed = cfg.synthetic
    x, y, _ = synthetic(n, p, seed=beta_seed)
    return x, y


def _split(cfg: RunConfig, x, y, k: int | None = None) -> list[LocalDataset]:
    return split_agencies(x, y, k or cfg.agencies, cfg.split, shuffle=cfg.shuffle, seed=cfg.seed)


def _auc_or_none(scores, labels) -> float | None:
    try:
        return auc(scores, labels)
    except UndefinedAUCError:
        return None


def _parity(run, datasets, fit_config) -> dict:
    """Compare the decrypted estimate with a plaintext fit; uses the escrow for beta* = B^-1 beta."""
    x, y = stack(datasets)
    xi = add_intercept(x)
    plain = fit(xi, y=y, config=fit_config)
    scale = 1.0 + float(np.max(np.abs(plain.beta)))
    beta_gap = float(np.max(np.abs(run.beta - plain.beta))) / scale
    b = run.escrow.key_product()
    expected_star = plain.beta.copy()
    expected_star[1:] = solve(b, plain.beta[1:])
    star_gap = float(np.max(np.abs(run.beta_star - expected_star))) / (1.0 + float(np.max(np.abs(expected_star))))
    auc_enc = _auc_or_none(probabilities(xi, run.beta), y)
    auc_plain = _auc_or_none(probabilities(xi, plain.beta), y)
    auc_gap = None if auc_enc is None or auc_plain is None else abs(auc_enc - auc_plain)
    passed = beta_gap < PARITY_TOL and star_gap < PARITY_TOL and (auc_gap is None or auc_gap < AUC_PARITY_TOL)
    return {"passed": bool(passed), "beta_gap": beta_gap, "beta_star_gap": star_gap,
            "auc_gap": auc_gap, "plaintext_auc": auc_plain, "plaintext_iterations": plain.iterations}


def cmd_fit(cfg: RunConfig, verify: bool = False) -> RunReport:
    report = RunReport(config=asdict(cfg))
    with _Phase("load"):
        x, y = load_data(cfg)
        datasets = _split(cfg, x, y)
    with _Phase("pipeline"):
        run = run_pipeline(cfg.protocol(), datasets, cfg.fit_config(), verify=verify, escrow=cfg.escrow)
    report.timings_ms = run.timings_ms
    report.iterations = run.fit.iterations
    report.converged = run.fit.converged
    report.extra["beta"] = run.beta.tolist()
    report.extra["transcript_digest"] = run.transcript.digest
    report.extra["messages"] = len(run.transcript)
    report.auc_train["encrypted"] = _auc_or_none(probabilities(add_intercept(x), run.beta), y)
    report.verification = [r.to_dict() for r in run.verification]
    if cfg.escrow:
        with _Phase("parity"):
            report.parity = _parity(run, datasets, cfg.fit_config())
            report.auc_train["plaintext"] = report.parity["plaintext_auc"]
        report.escrow_accesses = run.escrow.accesses
    return report


def cmd_verify(cfg: RunConfig) -> RunReport:
    return cmd_fit(cfg, verify=True)


def cmd_cv(cfg: RunConfig) -> RunReport:
    report = RunReport(config=asdict(cfg))
    with _Phase("load"):
        x, y = load_data(cfg)
        datasets = _split(cfg, x, y)
    t0 = time.perf_counter()
    with _Phase("cross-validation"):
        cv = cross_validate(datasets, cfg.folds, cfg.protocol(), cfg.fit_config(), plaintext=cfg.escrow)
    report.timings_ms["cross_validation"] = 1e3 * (time.perf_counter() - t0)
    report.auc_test["encrypted_pooled"] = cv.pooled_auc
    report.auc_test["encrypted_folds"] = cv.fold_aucs
    report.extra["cv"] = cv.to_dict()
    if cfg.escrow:
        gaps = [abs(f.auc - f.plaintext_auc) for f in cv.folds
                if f.auc is not None and f.plaintext_auc is not None]
        beta_gaps = [float(np.max(np.abs(f.beta - f.plaintext_beta))) / (1 + float(np.max(np.abs(f.plaintext_beta))))
                     for f in cv.folds]
        report.auc_test["plaintext_folds"] = [f.plaintext_auc for f in cv.folds]
        report.parity = {
            "passed": bool(max(gaps, default=0.0) < AUC_PARITY_TOL and max(beta_gaps) < PARITY_TOL),
            "max_auc_gap": max(gaps, default=None),
            "max_beta_gap": max(beta_gaps),
        }
    return report


def cmd_bench(cfg: RunConfig) -> RunReport:
    if cfg.dataset is None and cfg.synthetic is None:
        cfg.synthetic = (60000, 42, 0)
    report = RunReport(config=asdict(cfg))
    with _Phase("load"):
        x, y = load_data(cfg)
    rows = []
    for k in cfg.sweep or (cfg.agencies,):
        with _Phase(f"pipeline K={k}"):
            datasets = _split(cfg, x, y, k) if cfg.split is None or k == cfg.agencies else \
                split_agencies(x, y, k, None, shuffle=cfg.shuffle, seed=cfg.seed)
            run = run_pipeline(cfg.protocol(k), datasets, cfg.fit_config(), escrow=False)
        total = sum(run.timings_ms.values())
        for phase, ms in run.timings_ms.items():
            rows.append({"phase": phase, "K": k, "time_ms": ms})
        rows.append({"phase": "total", "K": k, "time_ms": total})
        report.iterations = run.fit.iterations
        report.converged = run.fit.converged
        log.info("K=%d: %s", k, ", ".join(f"{p} {ms:.0f} ms" for p, ms in run.timings_ms.items()))
    report.timings_ms = {f"{r['phase']}@K={r['K']}": r["time_ms"] for r in rows}
    report.extra["table"] = rows
    return report


def _toy_cpa() -> dict:
    b0 = np.array([[0.0, 0, 1], [0, 1, 0], [1, 0, 1]])
    coeffs = np.array([8.0, 0.3, -2.0])
    key = key_from_coefficients(Basis.from_matrix(b0), coeffs)
    verdict = attacks.analyze_cpa(attacks.build_cpa_system(np.eye(3), key.materialized, b0),
                                  true_coeffs=coeffs)
    return {"key": key.materialized.tolist(), **verdict.to_dict()}


def _random_cpa(cfg: RunConfig, n_offset: int, trials: int = 50) -> dict:
    """Random instances with ``n = p + n_offset``; A21 is uniform over all permutations."""
    rng = np.random.default_rng([cfg.seed, 0xC9A, n_offset + 10])
    tally, guess_hits, recovered = {}, 0, 0
    for t in range(trials):
        p = int(rng.integers(2, 6))
        n = max(1, p + n_offset)
        basis = gen_basis(p, p, [cfg.seed, t])
        key = gen_commutative_key(basis, [cfg.seed, t, 1])
        x1 = rng.standard_normal((n, p))
        a21 = PermutationKey.random(n, rng)
        observed = apply_permutation(a21, x1 @ key.materialized)
        v = attacks.analyze_cpa(attacks.build_cpa_system(x1, observed, basis.matrix()),
                                true_coeffs=key.coeffs[0])
        label = "/".join(sorted(set(v.outcomes)))
        tally[label] = tally.get(label, 0) + 1
        guess_hits += a21 == PermutationKey.identity(n)
        recovered += bool(v.recovers_true_key)
    return {"n_minus_p": n_offset, "trials": trials, "outcomes": tally,
            "a21_equals_guess": guess_hits, "true_key_recovered": recovered}


def cmd_attack(cfg: RunConfig) -> RunReport:
    report = RunReport(config=asdict(cfg))
    which = set(cfg.attacks)
    unknown = which - {"cpa", "kpa", "sigma", "collusion"}
    if unknown:
        raise ValueError(f"unknown attacks: {sorted(unknown)}")
    out = report.extra
    if "cpa" in which:
        with _Phase("cpa"):
            out["cpa_fixture"] = _toy_cpa()
            out["cpa_overdetermined"] = _random_cpa(cfg, 1)
            out["cpa_underdetermined"] = _random_cpa(cfg, 0)
    needs_data = which & {"kpa", "sigma", "collusion"}
    if needs_data and cfg.dataset is None and cfg.synthetic is None:
        cfg.synthetic = (200, 6, cfg.seed)
    if needs_data:
        with _Phase("load"):
            x, y = load_data(cfg)
    if "kpa" in which:
        with _Phase("kpa"):
            out["kpa"] = _kpa(cfg, x)
    if "sigma" in which:
        with _Phase("sigma"):
            out["sigma"] = attacks.sigma_scaling_experiment(
                x, [0.01, 0.03, 0.1, 0.3, 1.0], trials=100, seed=cfg.seed).to_dict()
    if "collusion" in which:
        with _Phase("collusion"):
            k = max(cfg.agencies, 2)
            datasets = split_agencies(x, y, k, shuffle=cfg.shuffle, seed=cfg.seed)
            out["collusion"] = attacks.collusion_harness(
                datasets, seed=cfg.seed, block_size=cfg.block_size).to_dict()
    return report


def _kpa(cfg: RunConfig, x: np.ndarray) -> dict:
    p = x.shape[1]
    basis = gen_basis(p, cfg.block_size, cfg.seed)
    key = gen_commutative_key(basis, [cfg.seed, 0x4B])
    rng = np.random.default_rng([cfg.seed, 0x4B])
    a = PermutationKey.random(x.shape[0], rng)
    x_star = apply_permutation(a, x @ key.materialized)
    half = x.shape[0] // 2
    s1 = attacks.kpa_scenario1(x_star, x[:half], true_x22=x[half:])
    # scenario II needs square blocks: n rows, n known columns, n hidden columns
    q = p // 2
    xs = x[:q, : 2 * q]
    basis2 = gen_basis(2 * q, cfg.block_size, cfg.seed)
    key2 = gen_commutative_key(basis2, [cfg.seed, 0x4C])
    a2 = PermutationKey.random(q, rng)
    s2 = attacks.kpa_scenario2(apply_permutation(a2, xs @ key2.materialized), q, xs[:, :q], xs[:, q:])
    return {"scenario_I": s1.to_dict(), "scenario_II": s2.to_dict()}


COMMANDS = {"fit": cmd_fit, "cv": cmd_cv, "verify": cmd_verify, "attack": cmd_attack, "bench": cmd_bench}


def write_report(report: RunReport, path: str | None):
    doc = report.to_dict()
    if path is None:
        return
    target = Path(path)
    target.write_text(json.dumps(doc, indent=2, default=float))
    table = doc["extra"].get("table")
    if table is None and report.timings_ms:
        table = [{"phase": k, "K": report.config["agencies"], "time_ms": v}
                 for k, v in report.timings_ms.items()]
    if table:
        with target.with_suffix(".timings.csv").open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["phase", "K", "time_ms"])
            writer.writeheader()
            writer.writerows(table)


def summarize(report: RunReport) -> str:
    lines = [f"command: {report.config['command']}  status: {'FAIL' if report.failed else 'ok'}"]
    if report.iterations is not None:
        lines.append(f"iterations: {report.iterations}  converged: {report.converged}")
    for k, v in report.timings_ms.items():
        lines.append(f"time {k}: {v:.1f} ms")
    for k, v in {**report.auc_train, **{f'test {k}': v for k, v in report.auc_test.items()}}.items():
        lines.append(f"auc {k}: {v}")
    for v in report.verification:
        lines.append(f"verify {v['check']}: {'pass' if v['passed'] else 'FAIL'} "
                     f"(gap {v['max_gap']:.3g}, tol {v['tolerance']:.3g}) {v['detail']}".rstrip())
    if report.parity is not None:
        lines.append("parity: " + ", ".join(f"{k}={v}" for k, v in report.parity.items()))
    lines.append(f"escrow accesses: {report.escrow_accesses}")
    return "\n".join(lines)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
    except ValueError as exc:
        parser.error(str(exc))
    if cfg.command in ("fit", "cv", "verify") and (cfg.dataset is None) == (cfg.synthetic is None):
        parser.error("give exactly one of --dataset or --synthetic")
    try:
        report = COMMANDS[cfg.command](cfg)
    except PhaseError as exc:
        log.error("%s", exc)
        return EXIT_PHASE_ERROR
    except ValueError as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    write_report(report, cfg.report)
    print(summarize(report))
    return EXIT_CHECK_FAILED if report.failed else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
