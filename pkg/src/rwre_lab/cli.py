"""Command line front door: ``rwre-lab simulate|limit|metric|verify --config FILE --out DIR``."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path


from . import io
from .config import EXPERIMENTS, ConfigError, RunConfig
from .env import Environment, ModelError, beta_blocks, derive_seed, require_limit_regime, solve_kappa
from .limitlaw import sample_Z, sample_Z_marginal
from .pathmetric import distance_matrix
from .runners import run_experiment
from .walk import build_centering, build_T_path, simulate_hitting_times


def _outdir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as e:
        raise ConfigError(f"output directory {out} is not writable: {e}") from e
    return out


def _regime_gate(cfg: RunConfig, key: str = "model") -> float:
    k = solve_kappa(cfg.model(key))
    try:
        require_limit_regime(k)
    except ModelError as e:
        raise ConfigError(f"regime gate: {e}") from e
    return k


def cmd_simulate(cfg: RunConfig, out: Path, jobs: int = 1) -> int:
    """Hitting-time traces, beta tables and scaled T paths for a few environments."""
    p = cfg.data["simulate"]
    m = cfg.model()
    _regime_gate(cfg)
    n, eps = int(p["n"]), float(p["eps"])
    if n < 1 or not eps > 0:
        raise ConfigError("simulate.n must be >= 1 and simulate.eps > 0")
    cent = build_centering(m, derive_seed(cfg.seed, 0), K=100_000, tol=cfg.tol["tol_W"])
    cent.tol_delta = cfg.tol["tol_delta"]
    traces, betas, paths = [], [], []
    for e in range(int(p["environments"])):
        env = Environment(m, derive_seed(cfg.seed, 1, e))
        tr = simulate_hitting_times(env, n, derive_seed(cfg.seed, 2, e))
        traces += [(e, k, int(t)) for k, t in enumerate(tr.T)]
        dec = beta_blocks(env, n, tol=cfg.tol["tol_W"])
        betas += [(e, i + 1, int(dec.nu[i + 1]), float(dec.beta[i]), float(dec.error[i])) for i in range(dec.K)]
        horizon = min(1.0, eps * n)
        paths.append(build_T_path(tr, eps, cent, horizon=horizon))
        if p.get("snapshot"):
            cols = env.to_columns(*env.window)
            io.write_csv(out / f"environment_{e}.csv", ("site", "omega", "rho"), cols.tolist(), cfg)
    io.write_csv(out / "traces.csv", ("env", "k", "T_k"), traces, cfg)
    io.write_csv(out / "betas.csv", ("env", "i", "nu_i", "beta_i", "bound_i"), betas, cfg)
    io.write_paths(out / "paths.csv", paths, cfg)
    return 0


def cmd_limit(cfg: RunConfig, out: Path, jobs: int = 1) -> int:
    """Samples of Z(1) and a few sample paths of Z for the configured model."""
    p = cfg.data["limit"]
    kap = _regime_gate(cfg)
    lam = float(p.get("lam", 1.0))
    z = sample_Z_marginal(lam, kap, float(p["delta"]), float(p["horizon"]), int(p["samples"]),
                          derive_seed(cfg.seed, 10))
    io.write_csv(out / "limit_Z.csv", ("sample", "Z_horizon"), [(i, float(x)) for i, x in enumerate(z)], cfg)
    paths = [sample_Z(lam, kap, float(p["delta"]), float(p["horizon"]), derive_seed(cfg.seed, 11, i))
             for i in range(int(p["paths"]))]
    io.write_paths(out / "limit_paths.csv", paths, cfg)
    return 0


def cmd_metric(cfg: RunConfig, out: Path, jobs: int = 1) -> int:
    """Pairwise distance matrix between the paths of two path files."""
    p = cfg.data["metric"]
    if not p.get("paths_a"):
        raise ConfigError("metric.paths_a is required")
    base = Path(cfg.source).parent if cfg.source else Path(".")
    fa = base / p["paths_a"]
    fb = base / (p.get("paths_b") or p["paths_a"])
    try:
        xs, ys = io.read_paths(fa), io.read_paths(fb)
    except (OSError, ValueError) as e:
        raise ConfigError(f"malformed path file: {e}") from e
    kind = p.get("kind", "M1")
    D = distance_matrix(xs, ys, kind=kind, tol=cfg.tol["tol_metric"])
    rows = [(i, *map(float, D[i])) for i in range(D.shape[0])]
    io.write_csv(out / f"distances_{kind}.csv", ("row", *[f"c{j}" for j in range(D.shape[1])]), rows, cfg)
    return 0


def cmd_verify(cfg: RunConfig, out: Path, jobs: int = 1) -> int:
    """Run the selected experiments; exit status 1 iff any of them fails."""
    records = []
    timing = []
    failed = []
    for name in cfg.selected:
        res = run_experiment(name, cfg, jobs)
        rep = res.report
        records.append(rep.to_record())
        timing.append(f"{name}\t{rep.runtime:.2f}s")
        for tname, (cols, rows) in res.tables.items():
            io.write_csv(out / f"{tname}.csv", cols, rows, cfg)
        for pname, draw in res.plots.items():
            io.write_svg(out / f"{pname}.svg", draw, title=pname)
        print(f"{'PASS' if rep.passed else 'FAIL'}  {name}  ({rep.runtime:.1f}s)", flush=True)
        if not rep.passed:
            failed.append(name)
    io.write_jsonl(out / "reports.jsonl", records, cfg)
    (out / "timing.log").write_text("\n".join(timing) + "\n")
    return 1 if failed else 0


COMMANDS = {"simulate": cmd_simulate, "limit": cmd_limit, "metric": cmd_metric, "verify": cmd_verify}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rwre-lab", description="RWRE simulation and limit-theorem verification")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="YAML run configuration")
    ap.add_argument("--out", required=True, help="output directory")
    ap.add_argument("--jobs", type=int, default=1, help="worker processes for replicate fan-out")
    ap.add_argument("--experiments", default=None,
                    help=f"comma-separated subset of: {','.join(EXPERIMENTS)}")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig.load(args.config)
        if args.experiments:
            cfg = cfg.with_selection([s.strip() for s in args.experiments.split(",") if s.strip()])
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        out = _outdir(args.out)
        return COMMANDS[args.command](cfg, out, args.jobs)
    except ConfigError as e:
        print(f"rwre-lab: config error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
