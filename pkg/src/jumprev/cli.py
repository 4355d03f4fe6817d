"""Command-line entry point.

Subcommands: simulate | marginals | reverse | verify | entropy | demo NAME.
Every command is deterministic under a fixed seed and config (byte-identical
outputs across runs and worker counts).  Exit codes: 0 success, 2 config
error, 3 mathematical precondition failure, 4 verification FAIL.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from .config import load_document, spec_from_config, spec_to_config
from .core import LevyKernel
from .demos import demo_names, get_demo
from .entropy import TiltFunction, relative_entropy, save_entropy_csv, tilt_process
from .errors import (AbsoluteContinuityViolation, BinMismatch, ConfigError,
                     EmptyEnsemble, ExplosionDetected, IntensityBoundExceeded,
                     NegativeProbability, NonfiniteState, QuadratureDivergence)
from .marginals import empirical_marginals, master_equation_marginals, save_marginals_csv
from .reversal import (levy_reverse, save_ac_report_csv, save_backward_drift_csv,
                       save_backward_kernel_csv, solve_backward_characteristics)
from .simulate import save_ensemble_jsonl, simulate_forward, terminal_state
from .verify import (compare_reversal, estimate_backward_intensity,
                     save_intensity_csv, save_report_csv)

_FMT = "%.17g"
_MATH_ERRORS = (AbsoluteContinuityViolation, IntensityBoundExceeded,
                ExplosionDetected, NonfiniteState, NegativeProbability,
                QuadratureDivergence, EmptyEnsemble, BinMismatch)


class RunConfig:
    """Resolved settings for one command: demo defaults, then the config
    document, then CLI flags (most specific wins)."""

    def __init__(self, args):
        doc = load_document(args.config) if args.config else {}
        demo_name = args.demo or doc.get("demo")
        demo = get_demo(demo_name) if demo_name else None
        self.demo_name = demo_name
        self.components = demo["components"] if demo else ()
        merged = {}
        if demo:
            for section, values in demo["defaults"].items():
                merged.setdefault(section, {}).update(values)
        for section in ("simulate", "marginals", "verify", "entropy"):
            if isinstance(doc.get(section), dict):
                merged.setdefault(section, {}).update(doc[section])
        self.sections = merged

        if "spec" in doc:
            self.spec = spec_from_config(doc["spec"])
        elif demo:
            self.spec = demo["build"]()
        else:
            raise ConfigError("no spec: pass --demo NAME or a config with a spec")

        self.seed = args.seed if args.seed is not None else \
            doc.get("seed", merged.get("simulate", {}).get("seed"))
        self.threads = args.threads if args.threads is not None else \
            int(doc.get("threads", os.environ.get("JUMPREV_THREADS", "1")))
        self.out = args.out or doc.get("out") or "."
        if args.n_paths is not None:
            merged.setdefault("simulate", {})["n_paths"] = args.n_paths
        if args.epsilon is not None:
            merged.setdefault("simulate", {})["epsilon"] = args.epsilon
        if getattr(args, "perturb", None) is not None:
            merged.setdefault("verify", {})["perturb_rates"] = args.perturb
        if getattr(args, "tilt", None) is not None:
            merged.setdefault("entropy", {})["tilt"] = args.tilt

    def require_seed(self) -> int:
        if self.seed is None:
            raise ConfigError("seed is mandatory for this command (no silent "
                              "nondeterminism): pass --seed N")
        return int(self.seed)

    def marginal_grid(self):
        m = self.sections.get("marginals", {})
        if "grid" in m:
            grid = np.asarray(m["grid"], dtype=float)
        else:
            t_min = float(m.get("t_min", 0.0))
            n = int(m.get("n_points", 51))
            grid = np.linspace(t_min, self.spec.horizon, n)
        return grid

    def out_path(self, name: str) -> str:
        os.makedirs(self.out, exist_ok=True)
        return os.path.join(self.out, name)


def _build_ensemble(cfg: RunConfig):
    sim = cfg.sections.get("simulate", {})
    n_paths = int(sim.get("n_paths", 10000))
    if n_paths <= 0:
        raise ConfigError("n_paths must be a positive integer")
    seed = cfg.require_seed()
    step = sim.get("rk4_step")
    return simulate_forward(cfg.spec, n_paths, seed,
                            epsilon=float(sim.get("epsilon", 0.0)),
                            threads=cfg.threads,
                            max_jumps=int(sim.get("max_jumps", 1_000_000)),
                            rk4_step=None if step is None else float(step))


def cmd_simulate(cfg: RunConfig) -> int:
    ensemble = _build_ensemble(cfg)
    save_ensemble_jsonl(ensemble, cfg.out_path("ensemble.jsonl"))
    with open(cfg.out_path("summary.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        d = cfg.spec.space.dim
        writer.writerow(["path", "n_events"] + [f"terminal{k}" for k in range(d)])
        for i, traj in enumerate(ensemble.paths):
            term = terminal_state(traj)
            writer.writerow([i, traj.n_events] + [_FMT % c for c in term])
    if isinstance(cfg.spec.kernel, LevyKernel):
        b_rev, lam_rev = levy_reverse(cfg.spec.kernel.drift, cfg.spec.kernel)
        sidecar = {"drift": b_rev.tolist(),
                   "atoms": [{"jump": xi.tolist(), "weight": w}
                             for xi, w in lam_rev.levy_atoms]}
        if lam_rev._density_src is not None:
            sidecar["density"] = lam_rev._density_src
            sidecar["support"] = [list(iv) for iv in lam_rev.support]
        with open(cfg.out_path("levy_reversal.json"), "w") as fh:
            json.dump(sidecar, fh, sort_keys=True, indent=1)
    print(f"simulate: wrote {len(ensemble.paths)} paths to {cfg.out}")
    return 0


def _oracle_marginals(cfg: RunConfig):
    grid = cfg.marginal_grid()
    if cfg.spec.space.kind == "finite":
        return master_equation_marginals(cfg.spec, grid)
    ensemble = _build_ensemble(cfg)
    m = cfg.sections.get("marginals", {})
    edges = m.get("bin_edges")
    if edges is None:
        lo, hi = cfg.spec.space.bounds[0]
        # keep the expected count per occupied bin comfortably above 20
        default_bins = max(10, min(200, len(ensemble.paths) // 20))
        edges = np.linspace(lo, hi, int(m.get("n_bins", default_bins)) + 1)
    return empirical_marginals(ensemble, grid, [np.asarray(edges, dtype=float)])


def cmd_marginals(cfg: RunConfig) -> int:
    flow = _oracle_marginals(cfg)
    save_marginals_csv(flow, cfg.out_path("marginals.csv"))
    print(f"marginals: {flow.times.size} slices x {flow.n_bins} bins -> {cfg.out}")
    return 0


def cmd_reverse(cfg: RunConfig) -> int:
    flow = _oracle_marginals(cfg)
    try:
        bc = solve_backward_characteristics(cfg.spec, flow)
    except AbsoluteContinuityViolation as exc:
        for t, state, mass in exc.offenders:
            print(f"absolute continuity violated at t={t:.6g}: "
                  f"state {state} receives flux {mass:.6g}", file=sys.stderr)
        raise
    save_backward_kernel_csv(bc, cfg.out_path("backward_kernel.csv"))
    save_backward_drift_csv(bc, cfg.out_path("backward_drift.csv"))
    save_ac_report_csv(bc, cfg.out_path("ac_report.csv"))
    print(f"reverse: {len(bc.slices)} kernel slices -> {cfg.out}")
    return 0


def cmd_verify(cfg: RunConfig) -> int:
    ensemble = _build_ensemble(cfg)
    ver = cfg.sections.get("verify", {})
    T = cfg.spec.horizon
    edges = np.asarray(ver.get("time_edges",
                               np.linspace(0.0, T, 11).tolist()), dtype=float)
    flow = _oracle_marginals(cfg)
    bc = solve_backward_characteristics(cfg.spec, flow)
    estimate = estimate_backward_intensity(ensemble, edges, cfg.spec.space)
    report = compare_reversal(
        estimate, bc, weights=flow,
        min_expected=float(ver.get("min_expected", 10.0)),
        exclude_touching_zero=bool(ver.get("exclude_touching_zero", True)),
        min_time=float(ver.get("min_time", 0.0)),
        rate_scale=float(ver.get("perturb_rates", 1.0)))
    save_intensity_csv(estimate, cfg.out_path("intensity.csv"))
    save_report_csv(report, cfg.out_path("reversal_report.csv"))
    print(f"verify: {report.n_usable} usable cells, "
          f"{report.frac_within_3:.3f} within 3 sigma, "
          f"{report.frac_within_4:.3f} within 4 sigma")
    if report.worst is not None:
        w = report.worst
        print(f"verify: worst cell t=[{w.t_lo:.3g},{w.t_hi:.3g}] "
              f"{w.from_idx}->{w.to_idx} z={w.z:.2f}")
    print(report.verdict_line)
    return 0 if report.verdict else 4


def cmd_entropy(cfg: RunConfig) -> int:
    ent = cfg.sections.get("entropy", {})
    if "tilt" not in ent:
        raise ConfigError("entropy command needs a tilt expression")
    if cfg.spec.space.kind != "finite":
        raise ConfigError("entropy command supports finite-state references")
    tilt = TiltFunction.from_expression(str(ent["tilt"]), dim=cfg.spec.space.dim)
    tilted = tilt_process(cfg.spec, tilt)
    initial = float(ent.get("initial_entropy", 0.0))
    rows = []
    for n in ent.get("refinements", [26, 51, 101]):
        grid = np.linspace(0.0, cfg.spec.horizon, int(n))
        flow = master_equation_marginals(tilted, grid)
        rows.append((int(n), relative_entropy(cfg.spec, tilt, flow, initial)))
    save_entropy_csv(rows, cfg.out_path("entropy.csv"))
    final = rows[-1][1]
    print(f"entropy: initial={final.initial_term:.9g} "
          f"running={final.running_term:.9g} total={final.total:.9g} "
          f"error={final.error_estimate:.3g}")
    return 0


def cmd_demo(cfg: RunConfig) -> int:
    if not cfg.components:
        raise ConfigError("demo command needs --demo NAME")
    with open(cfg.out_path("config.json"), "w") as fh:
        json.dump({"demo": cfg.demo_name, "spec": spec_to_config(cfg.spec),
                   "seed": cfg.seed, "sections": cfg.sections},
                  fh, sort_keys=True, indent=1)
    rc = 0
    for component in cfg.components:
        rc = _COMMANDS[component](cfg)
        if rc != 0:
            return rc
    return rc


_COMMANDS = {
    "simulate": cmd_simulate,
    "marginals": cmd_marginals,
    "reverse": cmd_reverse,
    "verify": cmd_verify,
    "entropy": cmd_entropy,
    "demo": cmd_demo,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="jumprev",
        description="simulate jump processes, reverse them in time, and "
                    "validate the reversal statistically")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("simulate", "marginals", "reverse", "verify", "entropy", "demo"):
        p = sub.add_parser(name)
        if name == "demo":
            p.add_argument("demo", choices=demo_names())
        else:
            p.add_argument("--demo", choices=demo_names())
        p.add_argument("--config", help="JSON config document")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory (default .)")
        p.add_argument("--threads", type=int)
        p.add_argument("--n-paths", type=int, dest="n_paths")
        p.add_argument("--epsilon", type=float)
        if name in ("verify", "demo"):
            p.add_argument("--perturb", type=float,
                           help="scale theoretical rates (negative control)")
        if name in ("entropy", "demo"):
            p.add_argument("--tilt", help="tilt expression j(t, x, y)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    for attr in ("n_paths", "epsilon", "perturb", "tilt"):
        if not hasattr(args, attr):
            setattr(args, attr, None)
    try:
        cfg = RunConfig(args)
        return _COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except KeyError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except _MATH_ERRORS as exc:
        print(f"precondition failed: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
