"""Command-line driver.

Every subcommand reads one JSON config (flags override where noted),
writes its artifacts plus a manifest.json recording the config hash,
seed, library versions, wall time, and output hashes, and exits with
0 on success, 2 on configuration errors, 3 on numerical errors, and 4
when a verification gate fails.  Identical config and seed reproduce
byte-identical artifacts; wall time lives only in the manifest.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import KNOWN_TESTS, RunConfig, parse_beta_grid
from .errors import ConfigError, NoStrongDisorderCertificateError, NumericalError
from .field_solver import ModelParams, run_ensemble, run_replica
from .ito_lab import (
    WindowRecord,
    claim1_check,
    claim2_bookkeeping,
    constants,
    ito_terms,
)
from .path_sampler import sample_collision_times
from .rw_kernel import KernelTable, as_site, containment_radius, heat_kernel
from .stat_lab import (
    ReplicaEnsemble,
    TestVerdict,
    free_energy_test,
    localization_scan,
    logZ_decomposition_test,
    martingale_test,
    qv_test,
    shuffled_control,
)

__all__ = ["main"]


def _fmt(x) -> str:
    """Shortest round-trip decimal for floats keeps CSV bytes stable."""
    return repr(float(x))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    return obj


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n")


def _write_csv(path: Path, header: list[str], rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        cells = []
        for cell in row:
            if isinstance(cell, str):
                cells.append(cell)
            elif isinstance(cell, (int, np.integer)):
                cells.append(str(int(cell)))
            else:
                cells.append(_fmt(cell))
        lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class _Run:
    """Output collector: every artifact registers here so the manifest
    next to the outputs always exists and lists their hashes."""

    def __init__(self, subcommand: str, out_dir: Path, config: dict, seed: int | None):
        out_dir.mkdir(parents=True, exist_ok=True)
        self.subcommand = subcommand
        self.out_dir = out_dir
        self.config = config
        self.seed = seed
        self.started = time.time()
        self.outputs: list[Path] = []

    def add(self, path: Path) -> Path:
        self.outputs.append(path)
        return path

    def finish(self, status: str = "complete", error: str | None = None) -> None:
        canon = json.dumps(_jsonable(self.config), sort_keys=True, separators=(",", ":"))
        manifest = {
            "subcommand": self.subcommand,
            "config": self.config,
            "config_sha256": hashlib.sha256(canon.encode()).hexdigest(),
            "master_seed": self.seed,
            "versions": {
                "pamlab": __version__,
                "python": platform.python_version(),
                "numpy": np.__version__,
                "scipy": scipy.__version__,
            },
            "wall_seconds": time.time() - self.started,
            "outputs": {p.name: _sha256(p) for p in self.outputs if p.exists()},
            "status": status,
            "error": error,
        }
        _write_json(self.out_dir / "manifest.json", manifest)


def _load_config(args) -> RunConfig:
    if getattr(args, "config", None):
        return RunConfig.from_json(args.config)
    return RunConfig()


def _resolve_workers(args, cfg: RunConfig) -> int:
    if getattr(args, "workers", None) is not None:
        if args.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {args.workers}")
        return args.workers
    env = os.environ.get("APL_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError as exc:
            raise ConfigError(f"APL_THREADS must be an integer, got {env!r}") from exc
        if n < 1:
            raise ConfigError(f"APL_THREADS must be >= 1, got {n}")
        return n
    return cfg.workers


def _build_ensemble(cfg: RunConfig, workers: int, **replica_opts) -> ReplicaEnsemble:
    params = cfg.model_params()
    series, failures = run_ensemble(
        params,
        workers=workers,
        tolerate_collapse=True,
        exact_diffusion=cfg.exact_diffusion,
        **replica_opts,
    )
    return ReplicaEnsemble(params=params, series=series, failures=failures)


# ---------------------------------------------------------------- kernel


def cmd_kernel(args) -> int:
    out_path = Path(args.table_out)
    run = _Run(
        "kernel",
        out_path.parent,
        {
            "d": args.d,
            "kappa": args.kappa,
            "t": args.t,
            "site": args.site,
            "radius": args.radius,
        },
        seed=None,
    )
    try:
        times = sorted(float(tok) for tok in args.t.split(","))
    except ValueError as exc:
        raise ConfigError(f"--t must be a comma-separated list of times: {exc}") from exc
    if not times or times[0] < 0:
        raise ConfigError("--t needs at least one nonnegative time")

    rows = []
    if args.site is not None:
        try:
            site = as_site(tuple(int(tok) for tok in args.site.split(":")), args.d)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        for t in times:
            rows.append((t, ":".join(str(c) for c in site), heat_kernel(t, site, args.d, args.kappa)))
    else:
        radius = args.radius
        if radius is None:
            radius = containment_radius(args.kappa, max(times) if times[-1] > 0 else 1.0)
        table = KernelTable.build(d=args.d, rate=args.kappa, times=times, radius=radius)
        for t, site, p in table.rows():
            rows.append((t, ":".join(str(c) for c in site), p))

    _write_csv(run.add(out_path), ["t", "site", "p"], rows)
    run.finish()
    return 0


# -------------------------------------------------------------- simulate


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    workers = _resolve_workers(args, cfg)
    out_dir = Path(args.out) if args.out else Path(cfg.out_dir)
    run = _Run("simulate", out_dir, cfg.to_dict(), cfg.master_seed)
    try:
        ens = _build_ensemble(cfg, workers)
        cols = ("Z", "logZ", "I", "V", "intI", "escaped")
        for s in ens.series:
            rows = zip(s.t, s.Z, s.logZ, s.I, s.V, s.intI, s.escaped)
            _write_csv(
                run.add(out_dir / f"series_{s.replica_index}.csv"),
                ["t", *cols],
                rows,
            )
        header = ["t"]
        for c in cols:
            header += [f"{c}_mean", f"{c}_stderr"]
        table = [ens.t]
        for c in cols:
            table += [ens.mean(c), ens.stderr(c)]
        _write_csv(run.add(out_dir / "ensemble.csv"), header, zip(*table))
        if ens.failures:
            run.finish(
                "partial",
                f"{len(ens.failures)} replicas collapsed: "
                + "; ".join(msg for _, msg in ens.failures[:3]),
            )
        else:
            run.finish()
        return 0
    except NumericalError as exc:
        run.finish("partial", str(exc))
        raise


# ---------------------------------------------------------------- verify


_TEST_RUNNERS = {
    "martingale": martingale_test,
    "qv": qv_test,
    "logz": logZ_decomposition_test,
    "free-energy": free_energy_test,
}


def cmd_verify(args) -> int:
    cfg = _load_config(args)
    workers = _resolve_workers(args, cfg)
    if args.tests:
        names = tuple(tok.strip() for tok in args.tests.split(",") if tok.strip())
        for name in names:
            if name not in KNOWN_TESTS:
                raise ConfigError(f"unknown test {name!r}; known: {', '.join(KNOWN_TESTS)}")
    else:
        names = cfg.tests
    out_path = Path(args.out) if args.out else Path(cfg.out_dir) / "report.json"
    run = _Run("verify", out_path.parent, cfg.to_dict(), cfg.master_seed)
    try:
        ens = _build_ensemble(
            cfg, workers, record_qv=True, drop_compensator=(args.control == "biased")
        )
        if args.control == "shuffled":
            ens = shuffled_control(ens)

        verdicts: list[TestVerdict] = []
        loc_report = None
        for name in names:
            if name == "localization":
                c0 = None
                if cfg.beta > 0:
                    try:
                        c0 = constants(
                            beta=cfg.beta, d=cfg.d, kappa=cfg.kappa, eps0=cfg.eps0
                        ).c0
                    except NoStrongDisorderCertificateError:
                        c0 = None
                loc_report = localization_scan(ens, window=cfg.window, c0=c0)
            else:
                verdicts.append(_TEST_RUNNERS[name](ens))

        report = {
            "control": args.control,
            "config": cfg.to_dict(),
            "verdicts": [v.to_dict() for v in verdicts],
            "localization": loc_report.to_dict() if loc_report else None,
            "classification": (
                loc_report.classify(cfg.slope_threshold, cfg.windowmax_threshold)
                if loc_report
                else None
            ),
            "collapsed_replicas": [[i, msg] for i, msg in ens.failures],
        }
        _write_json(run.add(out_path), report)
        run.finish()
        for v in verdicts:
            print(f"{v.name}: {v.status} (statistic {v.statistic:.4g}, tolerance {v.tolerance:.4g})")
        if loc_report:
            print(f"localization: {report['classification']}")
        return 4 if any(not v.passed for v in verdicts) else 0
    except NumericalError as exc:
        run.finish("partial", str(exc))
        raise


# ------------------------------------------------------------ verify-ito


def _ito_replica(task):
    """Worker: run one replica, reduce its window to scalars."""
    params, rep, window_start, window_stride, strides, claim_args = task
    s = run_replica(params, rep, window_start=window_start, window_stride=window_stride)
    win = WindowRecord.from_snapshots(s.window)
    out = {"replica": rep, "I_t": win.snapshots[-1].I}
    for st in strides:
        terms = ito_terms(win, params, stride=st)
        out[f"N_{st}"] = terms.implied_N
        if st == strides[0]:
            out.update(
                termA=terms.termA, termB=terms.termB, termC=terms.termC, termD=terms.termD
            )
    v1 = claim1_check(win, params)
    out["claim1_excess"] = v1.statistic
    if claim_args is not None:
        v2 = claim2_bookkeeping(s.t, s.I, claim_args)
        out["claim2_defect"] = v2.statistic
        out["claim2_tol"] = v2.tolerance
    return out


def cmd_verify_ito(args) -> int:
    cfg = _load_config(args)
    workers = _resolve_workers(args, cfg)
    out_path = Path(args.out) if args.out else Path(cfg.out_dir) / "ito_report.json"
    run = _Run("verify-ito", out_path.parent, cfg.to_dict(), cfg.master_seed)
    try:
        consts = None
        consts_error = None
        try:
            consts = constants(beta=cfg.beta, d=cfg.d, kappa=cfg.kappa, eps0=cfg.eps0)
        except (NoStrongDisorderCertificateError, ConfigError) as exc:
            consts_error = str(exc)
        t0 = args.t0 if args.t0 is not None else (cfg.t0 if cfg.t0 is not None else None)
        if t0 is None:
            if consts is None:
                raise ConfigError(
                    f"no window length: pass --t0 or fix the certificate ({consts_error})"
                )
            t0 = consts.t0

        params = cfg.model_params()
        if not 0.0 < t0 <= params.T:
            raise ConfigError(f"window t0={t0!r} must lie in (0, T={params.T}]")
        window_start = round((params.T - t0) / params.dt) * params.dt
        strides = (1, 2, 4)
        claim_args = consts if (consts is not None and params.T >= 2.0 * consts.t0) else None
        tasks = [
            (params, rep, window_start, cfg.ito_stride, strides, claim_args)
            for rep in range(params.replicas)
        ]
        if workers > 1:
            from concurrent.futures import ProcessPoolExecutor

            with ProcessPoolExecutor(max_workers=workers) as pool:
                rows = list(pool.map(_ito_replica, tasks, chunksize=4))
        else:
            rows = [_ito_replica(t) for t in tasks]

        N1 = np.array([r["N_1"] for r in rows])
        mean_N = float(N1.mean())
        se_N = float(N1.std(ddof=1) / math.sqrt(len(N1))) if len(N1) > 1 else math.inf
        d21 = float(np.median(np.abs([r["N_2"] - r["N_1"] for r in rows])))
        d42 = float(np.median(np.abs([r["N_4"] - r["N_2"] for r in rows])))
        claim1_worst = max(r["claim1_excess"] for r in rows)
        claim2_worst = (
            max(r["claim2_defect"] - r["claim2_tol"] for r in rows) if claim_args else None
        )

        verdicts = [
            TestVerdict(
                name="implied-N-mean",
                statistic=abs(mean_N),
                tolerance=4.0 * se_N,
                passed=abs(mean_N) <= 4.0 * se_N,
                status="pass" if abs(mean_N) <= 4.0 * se_N else "fail",
                details=f"mean implied_N = {mean_N:.5f} (stderr {se_N:.5f}, {len(N1)} replicas)",
            ),
            TestVerdict(
                name="stride-halving",
                statistic=(d21 / d42) if d42 > 0 else (0.0 if d21 == 0 else math.inf),
                tolerance=0.8,
                passed=bool(d21 <= 0.8 * d42),
                status="pass" if d21 <= 0.8 * d42 else "fail",
                details=f"median |N_2h - N_h| = {d21:.3e}, median |N_4h - N_2h| = {d42:.3e}",
            ),
            TestVerdict(
                name="claim1",
                statistic=float(claim1_worst),
                tolerance=1e-12,
                passed=bool(claim1_worst <= 1e-12),
                status="pass" if claim1_worst <= 1e-12 else "fail",
                details=f"worst inequality excess over all replicas: {claim1_worst:.3e}",
            ),
        ]
        if claim_args is not None:
            verdicts.append(
                TestVerdict(
                    name="claim2",
                    statistic=float(claim2_worst),
                    tolerance=0.0,
                    passed=bool(claim2_worst <= 0.0),
                    status="pass" if claim2_worst <= 0.0 else "fail",
                    details=f"worst Fubini defect beyond tolerance: {claim2_worst:.3e}",
                )
            )
        else:
            verdicts.append(
                TestVerdict(
                    name="claim2",
                    statistic=0.0,
                    tolerance=0.0,
                    passed=True,
                    status="not-applicable",
                    details=(
                        "no certificate window inside the horizon"
                        + (f": {consts_error}" if consts_error else "")
                    ),
                )
            )

        report = {
            "config": cfg.to_dict(),
            "constants": consts.to_dict() if consts else None,
            "constants_error": consts_error,
            "t": params.T,
            "t0": t0,
            "window_start": window_start,
            "snapshot_stride": cfg.ito_stride,
            "mean_implied_N": mean_N,
            "stderr_implied_N": se_N,
            "stride_medians": {"h_vs_2h": d21, "2h_vs_4h": d42},
            "verdicts": [v.to_dict() for v in verdicts],
            "replicas": rows,
        }
        _write_json(run.add(out_path), report)
        run.finish()
        for v in verdicts:
            print(f"{v.name}: {v.status} (statistic {v.statistic:.4g}, tolerance {v.tolerance:.4g})")
        return 4 if any(not v.passed for v in verdicts) else 0
    except NumericalError as exc:
        run.finish("partial", str(exc))
        raise


# ---------------------------------------------------------- second-moment


def cmd_second_moment(args) -> int:
    cfg = _load_config(args)
    workers = _resolve_workers(args, cfg)
    pairs = args.pairs if args.pairs is not None else cfg.pairs
    if pairs < 2:
        raise ConfigError(f"--pairs must be >= 2, got {pairs}")
    out_path = Path(args.out) if args.out else Path(cfg.out_dir) / "second_moment.csv"
    run = _Run("second-moment", out_path.parent, cfg.to_dict(), cfg.master_seed)
    try:
        ens = _build_ensemble(cfg, workers)
        z2 = np.array([s.Z[-1] ** 2 for s in ens.series])
        beta2 = cfg.beta**2
        params = ens.params
        L = sample_collision_times(params, T=params.T, n_pairs=pairs)
        w = np.exp(beta2 * L)
        rows = [
            (
                "env_mc_Z2",
                z2.mean(),
                z2.std(ddof=1) / math.sqrt(len(z2)),
                len(z2),
            ),
            (
                "path_pair_expL",
                w.mean(),
                w.std(ddof=1) / math.sqrt(len(w)),
                len(w),
            ),
        ]
        _write_csv(run.add(out_path), ["estimator", "mean", "stderr", "n"], rows)
        run.finish()
        return 0
    except NumericalError as exc:
        run.finish("partial", str(exc))
        raise


# ------------------------------------------------------------ phase-scan


def cmd_phase_scan(args) -> int:
    cfg = _load_config(args)
    workers = _resolve_workers(args, cfg)
    grid = parse_beta_grid(args.beta_grid if args.beta_grid else cfg.beta_grid)
    out_path = Path(args.out) if args.out else Path(cfg.out_dir) / "scan.csv"
    run = _Run("phase-scan", out_path.parent, cfg.to_dict(), cfg.master_seed)
    try:
        rows = []
        for beta in grid:
            sub = RunConfig.from_dict({**cfg.to_dict(), "beta": beta})
            ens = _build_ensemble(sub, workers)
            T = ens.params.T
            logZ_T = ens.col("logZ")[:, -1]
            intI_T = ens.col("intI")[:, -1]
            p1 = float(logZ_T.mean() / T)
            p2 = float(-0.5 * beta * beta * intI_T.mean() / T)
            rep = localization_scan(ens, window=min(cfg.window, T))
            rows.append(
                (
                    beta,
                    p1,
                    p2,
                    float(np.median(rep.lasthalf_rate)),
                    float(np.median(rep.win_max_I)),
                    rep.classify(cfg.slope_threshold, cfg.windowmax_threshold),
                )
            )
        _write_csv(
            run.add(out_path),
            ["beta", "p_hat1", "p_hat2", "intI_rate", "windowmax_I_median", "classification"],
            rows,
        )
        run.finish()
        return 0
    except NumericalError as exc:
        run.finish("partial", str(exc))
        raise


# ------------------------------------------------------------- constants


def cmd_constants(args) -> int:
    c = constants(beta=args.beta, d=args.d, kappa=args.kappa, eps0=args.eps0)
    text = json.dumps(_jsonable(c.to_dict()), sort_keys=True, indent=2)
    print(text)
    if args.out:
        out_path = Path(args.out)
        run = _Run(
            "constants",
            out_path.parent,
            {"d": args.d, "kappa": args.kappa, "beta": args.beta, "eps0": args.eps0},
            seed=None,
        )
        run.add(out_path).write_text(text + "\n")
        run.finish()
    return 0


# ----------------------------------------------------------------- parser


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="pamlab",
        description=(
            "Numerical laboratory for the lattice parabolic Anderson model and "
            "the directed polymer it normalizes."
        ),
    )
    sub = p.add_subparsers(dest="command", required=True)

    def add_common(sp, workers=True):
        sp.add_argument("--config", help="JSON run configuration")
        if workers:
            sp.add_argument(
                "--workers",
                type=int,
                default=None,
                help="replica worker processes (overrides APL_THREADS and config)",
            )

    sp = sub.add_parser("kernel", help="walk kernel values or full table as CSV")
    sp.add_argument("--d", type=int, required=True)
    sp.add_argument("--kappa", type=float, default=1.0)
    sp.add_argument("--t", required=True, help="comma-separated times")
    sp.add_argument("--site", help="colon-separated integer coordinates")
    sp.add_argument("--radius", type=int, default=None, help="table box radius")
    sp.add_argument("--table-out", required=True)
    sp.set_defaults(func=cmd_kernel)

    sp = sub.add_parser("simulate", help="run the replica ensemble, dump series CSVs")
    add_common(sp)
    sp.add_argument("--out", help="output directory")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("verify", help="statistical test battery, JSON report")
    add_common(sp)
    sp.add_argument("--tests", help=f"comma list from: {','.join(KNOWN_TESTS)}")
    sp.add_argument(
        "--control",
        choices=("none", "biased", "shuffled"),
        default="none",
        help="deliberately broken variant that the suite must flag",
    )
    sp.add_argument("--out", help="report path (default <out_dir>/report.json)")
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("verify-ito", help="window decomposition and claims, JSON report")
    add_common(sp)
    sp.add_argument("--t0", type=float, default=None, help="window length override")
    sp.add_argument("--out", help="report path (default <out_dir>/ito_report.json)")
    sp.set_defaults(func=cmd_verify_ito)

    sp = sub.add_parser("second-moment", help="two-route second-moment estimators")
    add_common(sp)
    sp.add_argument("--pairs", type=int, default=None, help="walk pairs for the path route")
    sp.add_argument("--out", help="CSV path (default <out_dir>/second_moment.csv)")
    sp.set_defaults(func=cmd_second_moment)

    sp = sub.add_parser("phase-scan", help="free energy and localization along a beta grid")
    add_common(sp)
    sp.add_argument("--beta-grid", help="start:stop:step (inclusive)")
    sp.add_argument("--out", help="CSV path (default <out_dir>/scan.csv)")
    sp.set_defaults(func=cmd_phase_scan)

    sp = sub.add_parser("constants", help="strong-disorder certificate constants as JSON")
    sp.add_argument("--d", type=int, required=True)
    sp.add_argument("--kappa", type=float, default=1.0)
    sp.add_argument("--beta", type=float, required=True)
    sp.add_argument("--eps0", type=float, default=1.0 / 32.0)
    sp.add_argument("--out", help="also write the JSON here")
    sp.set_defaults(func=cmd_constants)

    return p


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
