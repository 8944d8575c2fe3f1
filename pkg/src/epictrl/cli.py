"""Command line: ``epictrl simulate | verify | value-map``.

Exit codes: 0 success, 1 failed verdict, 2 bad arguments or config,
3 infeasible start (simulate) or trivial regime (value-map).
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from .config import SCENARIOS, ScenarioConfig, load_config, load_scenario
from .controller import run_filling_the_box, value_many
from .dynamics import ControlSignal, cost_J, simulate
from .exceptions import ConfigError, InfeasibleStart
from .geometry import build_geometry, classify_many
from .verification import counterexample_checks, verify_scenario

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_STATE = 0, 1, 2, 3


def _fmt(v) -> str:
    return f"{v:.12g}"


def _dump_json(obj, path: Path):
    def r(o):
        if isinstance(o, float):
            return float(_fmt(o)) if np.isfinite(o) else str(o)
        if isinstance(o, dict):
            return {k: r(v) for k, v in o.items()}
        if isinstance(o, (list, tuple)):
            return [r(v) for v in o]
        if isinstance(o, np.generic):
            return r(o.item())
        return o
    path.write_text(json.dumps(r(obj), indent=2, sort_keys=True) + "\n")


def _load(args) -> ScenarioConfig:
    if args.config:
        return load_config(args.config)
    return load_scenario(args.scenario or "fig1")


def _out_dir(args, cfg: ScenarioConfig) -> Path:
    d = Path(args.out or cfg.out_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = _load(args)
    out = _out_dir(args, cfg)
    m, integ = cfg.model, cfg.integrator
    if cfg.y0 > cfg.ybar:
        raise InfeasibleStart(f"y0={cfg.y0} is above the threshold {cfg.ybar}")
    control = args.control or "both"
    summary: dict = {"scenario": cfg.name}

    if control in ("zero", "both"):
        free = simulate(m, ControlSignal.zero(), cfg.s0, integ, "extinction", ybar=cfg.ybar)
        free.to_csv(out / "uncontrolled.csv")
        summary["uncontrolled"] = {"cost": 0.0, "max_y": float(np.max(free.y)),
                                   "feasible": bool(np.max(free.y) <= cfg.ybar + 1e-8)}
    if control in ("ftb", "both"):
        thresholds = [cfg.ybar] + ([cfg.ybar_high] if cfg.ybar_high else [])
        for k, yb in enumerate(thresholds):
            g = build_geometry(m, yb, integ)
            run = run_filling_the_box(g, cfg.s0, integ)
            tag = "controlled" if k == 0 else f"controlled_{_fmt(yb)}"
            run.trajectory.to_csv(out / f"{tag}.csv")
            summary[tag] = run.summary()
            if k == 0:
                _dump_json(run.summary(), out / "summary.json")
    elif control.startswith("file:"):
        c = ControlSignal.from_csv(control[5:])
        tr = simulate(m, c, cfg.s0, integ, "extinction", ybar=cfg.ybar)
        tr.to_csv(out / "controlled.csv")
        res = {"cost": cost_J(tr), "feasible": bool(np.max(tr.y) <= cfg.ybar + 1e-8),
               "regime": "open_loop"}
        summary["controlled"] = res
        _dump_json(res, out / "summary.json")
    elif control not in ("zero", "both"):
        raise ConfigError(f"--control must be zero, ftb or file:<path>, got {control!r}")

    if cfg.orbits:
        _portrait(cfg, out)
    _dump_json(summary, out / "run.json")
    print(f"wrote {out}")
    return EXIT_OK


def _portrait(cfg: ScenarioConfig, out: Path):
    """Curves ``kappa``/``lambda`` and a fan of uncontrolled orbits."""
    m, integ = cfg.model, cfg.integrator
    g = build_geometry(m, cfg.ybar, integ)
    g.curves_csv(out / "curves.csv")
    _dump_json(g.summary(), out / "geometry.json")
    ys0 = np.linspace(0.01, 0.2, cfg.orbits)
    for k, y0 in enumerate(ys0):
        tr = simulate(m, ControlSignal.zero(), (1.0 - y0, y0), integ.replace(record_every=100),
                      "extinction", ybar=cfg.ybar)
        tr.to_csv(out / f"orbit_{k:02d}.csv")


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------

def cmd_verify(args) -> int:
    cfg = _load(args)
    g = build_geometry(cfg.model, cfg.ybar, cfg.integrator)
    seed = cfg.seed if args.seed is None else args.seed
    rep = None
    if g.mode == "direct":
        checks = counterexample_checks(cfg.gamma)
    else:
        checks, rep = verify_scenario(g, cfg.s0, scenario=cfg.name, n_alts=args.alts,
                                      seed=seed, tol_opt=args.tol_opt, cfg=cfg.integrator,
                                      dump_dir=args.dump_dir)
    width = max(len(c.name) for c in checks)
    print(f"scenario {cfg.name} (regime {g.mode})")
    for c in checks:
        print(f"  {'PASS' if c.passed else 'FAIL'}  {c.name:<{width}}  {c.detail}")
    if args.report and rep is not None:
        rep.to_json(args.report)
    ok = all(c.passed for c in checks)
    print("verdict:", "pass" if ok else "fail")
    return EXIT_OK if ok else EXIT_FAIL


# ---------------------------------------------------------------------------
# value-map
# ---------------------------------------------------------------------------

def value_grid(cfg: ScenarioConfig, resolution: int):
    """Grid points ``(i/N, j/N)`` of D with labels and values."""
    g = build_geometry(cfg.model, cfg.ybar, cfg.integrator)
    if g.mode != "separatrix":
        return g, None
    n = int(resolution)
    i, j = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="ij")
    keep = (i + j <= n) & (j / n <= cfg.ybar)
    X = np.column_stack([i[keep] / n, j[keep] / n])
    return g, (X, classify_many(g, X), value_many(g, X))


def cmd_value_map(args) -> int:
    cfg = _load(args)
    if args.resolution < 1:
        raise ConfigError("--resolution must be positive")
    g, grid = value_grid(cfg, args.resolution)
    if grid is None:
        print(f"regime {g.mode}: no value map (zero control is optimal)"
              if g.mode == "trivial" else f"regime {g.mode}: value map undefined",
              file=sys.stderr)
        return EXIT_STATE
    X, lab, V = grid
    lines = ["x,y,region,V"] + [f"{_fmt(a)},{_fmt(b)},{r},{_fmt(v)}"
                                for (a, b), r, v in zip(X, lab, V)]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="epictrl", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def source(sp):
        grp = sp.add_mutually_exclusive_group()
        grp.add_argument("--scenario", choices=SCENARIOS)
        grp.add_argument("--config", metavar="PATH")

    s = sub.add_parser("simulate", help="trajectories and summary for one scenario")
    source(s)
    s.add_argument("--control", metavar="zero|ftb|file:PATH")
    s.add_argument("--out", metavar="DIR")
    s.set_defaults(func=cmd_simulate)

    v = sub.add_parser("verify", help="invariant suite and optimality sweep")
    source(v)
    v.add_argument("--alts", type=int, default=200)
    v.add_argument("--seed", type=int)
    v.add_argument("--tol-opt", type=float, default=1e-3)
    v.add_argument("--report", metavar="JSON")
    v.add_argument("--dump-dir", metavar="DIR")
    v.set_defaults(func=cmd_verify)

    m = sub.add_parser("value-map", help="grid CSV x,y,region,V")
    source(m)
    m.add_argument("--resolution", type=int, default=100)
    m.add_argument("--out", metavar="CSV")
    m.set_defaults(func=cmd_value_map)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    warnings.simplefilter("ignore", UserWarning)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"epictrl: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InfeasibleStart as exc:
        print(f"epictrl: infeasible start: {exc}", file=sys.stderr)
        return EXIT_STATE


if __name__ == "__main__":
    sys.exit(main())
