"""Forward Monte Carlo for jump processes with drift, and pathwise reversal.

Jump times are drawn by Ogata thinning against a per-path local intensity
majorant that is refreshed on a fixed look-ahead window and after every
accepted jump.  Between jumps the state follows the effective drift

    b_eff(t, x) = b_delta(t, x) - integral of xi over {eps < |xi| <= delta},

which folds the compensator of the simulated (eps-truncated) jumps back into
the flow.  Each path owns a counter-based Philox stream keyed by
(seed, path index), so ensembles are reproducible and independent of worker
count and completion order.
"""

from __future__ import annotations

import json
import math
import warnings
import weakref
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .config import fingerprint_spec
from .core import ProcessSpec, probe_hypotheses
from .errors import (EmptyEnsemble, ExplosionDetected, IntensityBoundExceeded,
                     NonfiniteState, TimeOutOfRange)

DEFAULT_MAX_JUMPS = 1_000_000


def _rk4(f, t0, x0, t1, h):
    """Classical fixed-step 4th order integration of dx/dt = f(t, x)."""
    if t1 <= t0:
        return np.array(x0, dtype=float, copy=True)
    n = max(1, int(math.ceil((t1 - t0) / h - 1e-12)))
    dt = (t1 - t0) / n
    x = np.array(x0, dtype=float, copy=True)
    t = t0
    for _ in range(n):
        k1 = f(t, x)
        k2 = f(t + 0.5 * dt, x + 0.5 * dt * k1)
        k3 = f(t + 0.5 * dt, x + 0.5 * dt * k2)
        k4 = f(t + dt, x + dt * k3)
        x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t += dt
    return x


@dataclass(frozen=True)
class DriftFlow:
    """Deterministic flow between jumps; advance(t0, x0, t1) with t1 >= t0.

    Constant fields integrate exactly in one step; everything else runs
    fixed-step classical RK4.
    """

    b_eff: object
    step: float
    constant: object = None

    def advance(self, t0, x0, t1):
        if self.constant is not None:
            return np.asarray(x0, dtype=float) + (t1 - t0) * self.constant
        return _rk4(self.b_eff, t0, x0, t1, self.step)

    def reversed(self, horizon: float) -> "DriftFlow":
        b = self.b_eff
        const = None if self.constant is None else -self.constant
        return DriftFlow(b_eff=lambda tau, y: -b(horizon - tau, y),
                         step=self.step, constant=const)


@dataclass
class Trajectory:
    """Cadlag path: initial state plus ordered jump events on (0, T].

    states[k] is the state immediately after the k-th event (states[0] the
    initial state); between events the state follows the flow, or stays
    constant when flow is None.
    """

    initial_state: np.ndarray
    times: np.ndarray
    jumps: np.ndarray
    horizon: float
    states: Optional[np.ndarray] = None
    flow: Optional[DriftFlow] = None
    _partner: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.initial_state = np.asarray(self.initial_state, dtype=float).ravel()
        d = self.initial_state.size
        self.times = np.asarray(self.times, dtype=float).reshape(-1)
        self.jumps = np.asarray(self.jumps, dtype=float).reshape(-1, d)
        if self.times.size != self.jumps.shape[0]:
            raise ValueError("times and jumps must align")
        if self.times.size and (np.any(np.diff(self.times) <= 0)
                                or self.times[0] <= 0 or self.times[-1] > self.horizon):
            raise ValueError("event times must be strictly increasing in (0, T]")
        if self.states is None:
            if self.flow is None:
                self.states = np.vstack([self.initial_state,
                                         self.initial_state + np.cumsum(self.jumps, axis=0)]) \
                    if self.times.size else self.initial_state.reshape(1, d)
            else:
                states = [self.initial_state]
                t_prev, x = 0.0, self.initial_state
                for t, xi in zip(self.times, self.jumps):
                    x = self.flow.advance(t_prev, x, t) + xi
                    states.append(x)
                    t_prev = t
                self.states = np.vstack(states)
        else:
            self.states = np.asarray(self.states, dtype=float).reshape(-1, d)
            if self.states.shape[0] != self.times.size + 1:
                raise ValueError("states must hold one row per event plus the start")

    @property
    def n_events(self) -> int:
        return int(self.times.size)

    def state_at(self, t: float) -> np.ndarray:
        return state_at(self, t)


def state_at(traj: Trajectory, t: float) -> np.ndarray:
    """Cadlag evaluation: flow forward from the last event at or before t."""
    if t < -1e-12 or t > traj.horizon + 1e-12:
        raise TimeOutOfRange(f"t={t} outside [0, {traj.horizon}]")
    t = min(max(t, 0.0), traj.horizon)
    k = int(np.searchsorted(traj.times, t, side="right"))
    base_t = float(traj.times[k - 1]) if k > 0 else 0.0
    base = traj.states[k]
    if traj.flow is None or t == base_t:
        return base.copy()
    return traj.flow.advance(base_t, base, t)


def terminal_state(traj: Trajectory) -> np.ndarray:
    return state_at(traj, traj.horizon)


def reverse_path(traj: Trajectory) -> Trajectory:
    """Time reversal X*_t = X_{(T-t)-}: terminal state becomes initial, each
    event (t, xi) becomes (T-t, -xi), drift segments run backward.

    Reversal partners are cached (weakly), so reversing twice returns the
    original trajectory bit-identically.
    """
    if traj._partner is not None:
        cached = traj._partner()
        if cached is not None:
            return cached
    T = traj.horizon
    m = traj.n_events
    rev_times = (T - traj.times)[::-1].copy()
    rev_jumps = (-traj.jumps)[::-1].copy()
    # state after reversed event k = state just before forward event m-k
    pre = traj.states[1:] - traj.jumps if m else np.empty((0, traj.initial_state.size))
    rev_states = np.vstack([terminal_state(traj).reshape(1, -1), pre[::-1]])
    rev = Trajectory(initial_state=rev_states[0], times=rev_times, jumps=rev_jumps,
                     horizon=T, states=rev_states,
                     flow=None if traj.flow is None else traj.flow.reversed(T))
    rev._partner = weakref.ref(traj)
    traj._partner = weakref.ref(rev)
    return rev


@dataclass
class PathEnsemble:
    """A bag of trajectories from one spec, one seed, one direction."""

    paths: list
    seed: int
    direction: str = "forward"
    spec_fingerprint: str = "opaque"
    horizon: float = 0.0

    def __post_init__(self):
        if self.paths:
            T = self.paths[0].horizon
            if any(p.horizon != T for p in self.paths):
                raise ValueError("all paths must share the same horizon")
            self.horizon = T

    def __len__(self) -> int:
        return len(self.paths)


def reverse_ensemble(ensemble: PathEnsemble) -> PathEnsemble:
    flipped = "reversed" if ensemble.direction == "forward" else "forward"
    return PathEnsemble(paths=[reverse_path(p) for p in ensemble.paths],
                        seed=ensemble.seed, direction=flipped,
                        spec_fingerprint=ensemble.spec_fingerprint,
                        horizon=ensemble.horizon)


# ---------------------------------------------------------------------------
# forward simulation
# ---------------------------------------------------------------------------

def _flow_for_spec(spec: ProcessSpec, epsilon: float, step: float):
    """Effective inter-jump flow: None for pure-jump delta=0 specs, an exact
    linear flow for constant drifts, otherwise RK4 on b_eff."""
    drift = spec.drift
    delta = float(spec.delta)
    if drift.is_zero and delta == 0.0:
        return None
    if delta == 0.0 and drift.constant_value is not None:
        return DriftFlow(b_eff=drift.__call__, step=step,
                         constant=drift.constant_value)
    if delta > 0.0:
        def b_eff(t, x, _b=drift, _k=spec.kernel, _e=epsilon, _d=delta):
            return _b(t, x) - _k.mean_truncated(t, x, _e, _d)
    else:
        b_eff = drift.__call__
    return DriftFlow(b_eff=b_eff, step=step)


def _simulate_one(spec: ProcessSpec, flow, path_index: int, seed: int, eps: float,
                  jump_range: float, max_jumps: int, bound_margin: float,
                  window: float, box_margin: float) -> Trajectory:
    rng = np.random.Generator(np.random.Philox(key=[seed % 2 ** 64, path_index]))
    kernel = spec.kernel
    space = spec.space
    T = spec.horizon
    x = spec.initial_law.sample(rng, space)
    t = 0.0
    ev_t: list = []
    ev_xi: list = []
    states = [x.copy()]

    homogeneous = kernel.time_homogeneous()
    total_rate = kernel.total_rate

    def refresh(t_now, x_now):
        w_end = min(t_now + window, T)
        if flow is None:
            # state is constant until the next jump and the bound is
            # refreshed after every jump, so probing x_now suffices
            if homogeneous:
                lam = total_rate(t_now, x_now, eps)
            else:
                lam = max(total_rate(s, x_now, eps)
                          for s in (t_now, 0.5 * (t_now + w_end), w_end))
            return w_end, bound_margin * lam
        ts = (t_now,) if homogeneous else (t_now, 0.5 * (t_now + w_end), w_end)
        pts = [x_now]
        db = float(np.linalg.norm(flow.b_eff(t_now, x_now)))
        radius = window * db + jump_range
        if radius > 0:
            for axis in range(space.dim):
                e = np.zeros(space.dim)
                e[axis] = radius
                pts.extend([x_now + e, x_now - e])
        lam = max(total_rate(s, p, eps) for s in ts for p in pts)
        return w_end, bound_margin * lam

    def advance(t0, x0, t1):
        if flow is None or t1 <= t0:
            return x0
        out = flow.advance(t0, x0, t1)
        if not np.all(np.isfinite(out)) or not space.contains(out, box_margin):
            raise NonfiniteState(
                f"path {path_index}: drift flow left the bounding box near t={t1:.6g}")
        return out

    window_end, bound = refresh(t, x)
    while t < T:
        if bound <= 0.0:
            x = advance(t, x, window_end)
            t = window_end
            if t >= T:
                break
            window_end, bound = refresh(t, x)
            continue
        dt = rng.exponential(1.0 / bound)
        if t + dt > window_end:
            x = advance(t, x, window_end)
            t = window_end
            if t >= T:
                break
            window_end, bound = refresh(t, x)
            continue
        x = advance(t, x, t + dt)
        t = t + dt
        lam = total_rate(t, x, eps)
        if lam > bound * (1.0 + 1e-9):
            raise IntensityBoundExceeded(
                f"path {path_index}: intensity {lam:.6g} exceeds majorant {bound:.6g} "
                f"at t={t:.6g}; the local bound heuristic failed")
        if rng.random() * bound < lam:
            xi = kernel.sample_jump(t, x, rng, eps)
            x = x + xi
            if not np.all(np.isfinite(x)) or not space.contains(x, box_margin):
                raise NonfiniteState(
                    f"path {path_index}: jump left the bounding box at t={t:.6g}")
            ev_t.append(t)
            ev_xi.append(xi)
            states.append(x.copy())
            if len(ev_t) > max_jumps:
                raise ExplosionDetected(
                    f"path {path_index}: more than {max_jumps} jumps on [0, T]")
            window_end, bound = refresh(t, x)
    d = space.dim
    return Trajectory(initial_state=states[0],
                      times=np.array(ev_t, dtype=float),
                      jumps=(np.array(ev_xi, dtype=float).reshape(-1, d)),
                      horizon=T,
                      states=np.vstack(states).reshape(-1, d),
                      flow=flow)


def simulate_forward(spec: ProcessSpec, n_paths: int, seed: int, epsilon: float = 0.0,
                     *, threads: int = 1, max_jumps: int = DEFAULT_MAX_JUMPS,
                     rk4_step: Optional[float] = None, bound_margin: float = 1.5,
                     window_frac: float = 0.1,
                     box_margin: Optional[float] = None) -> PathEnsemble:
    """Draw n_paths trajectories of the spec by thinning.

    epsilon discards jumps with |xi| <= epsilon (mandatory > 0 for
    infinite-activity kernels); their compensator is folded into the flow
    when delta > 0.  Raises IntensityBoundExceeded / ExplosionDetected /
    NonfiniteState as documented.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    report = probe_hypotheses(spec, spec.probe_points())
    if not report.quadratic_ok:
        raise ValueError("kernel fails the quadratic integrability probe (no simulation)")
    delta = float(spec.delta)
    if epsilon == 0.0 and any(not e.finite_activity for e in report.entries):
        raise ValueError("infinite-activity kernel: epsilon > 0 is required")
    if delta == 0.0 and not report.delta_zero_admissible:
        raise ValueError("delta = 0 requires the bounded-variation probe or finite activity")
    if epsilon > 0 and delta > 0 and epsilon >= delta:
        raise ValueError("epsilon must be smaller than delta")

    T = spec.horizon
    step = rk4_step if rk4_step is not None else T / 1000.0
    kernel = spec.kernel
    flow = _flow_for_spec(spec, epsilon, step)

    extents = spec.space.bounds[:, 1] - spec.space.bounds[:, 0]
    margin = box_margin if box_margin is not None else \
        max(1.0, 0.25 * float(np.max(extents))) + report.max_jump_range
    window = window_frac * T

    def run(i):
        return _simulate_one(spec, flow, i, seed, epsilon, report.max_jump_range,
                             max_jumps, bound_margin, window, margin)

    if threads <= 1:
        paths = [run(i) for i in range(n_paths)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            paths = list(pool.map(run, range(n_paths)))
    return PathEnsemble(paths=paths, seed=seed, direction="forward",
                        spec_fingerprint=fingerprint_spec(spec), horizon=T)


# ---------------------------------------------------------------------------
# JSON-lines export / import
# ---------------------------------------------------------------------------

def save_ensemble_jsonl(ensemble: PathEnsemble, path) -> None:
    """One metadata line, then one trajectory per line (initial + events)."""
    with open(path, "w") as fh:
        meta = {"fingerprint": ensemble.spec_fingerprint, "seed": ensemble.seed,
                "direction": ensemble.direction, "horizon": ensemble.horizon,
                "n_paths": len(ensemble.paths)}
        fh.write(json.dumps({"meta": meta}, sort_keys=True) + "\n")
        for traj in ensemble.paths:
            rec = {"initial": traj.initial_state.tolist(),
                   "events": [[float(t), xi.tolist()]
                              for t, xi in zip(traj.times, traj.jumps)]}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def load_ensemble_jsonl(path, spec: Optional[ProcessSpec] = None,
                        epsilon: float = 0.0) -> PathEnsemble:
    """Import an ensemble; fingerprint mismatch against spec is a warning."""
    flow = None
    if spec is not None:
        flow = _flow_for_spec(spec, epsilon, spec.horizon / 1000.0)
    paths = []
    meta = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if "meta" in rec:
                meta = rec["meta"]
                continue
            events = rec["events"]
            times = np.array([e[0] for e in events], dtype=float)
            jumps = np.array([e[1] for e in events], dtype=float)
            init = np.asarray(rec["initial"], dtype=float)
            jumps = jumps.reshape(-1, init.size)
            paths.append(Trajectory(initial_state=init, times=times, jumps=jumps,
                                    horizon=float(meta.get("horizon", 0.0) or
                                                  (times[-1] if times.size else 1.0)),
                                    flow=flow))
    if not paths:
        raise EmptyEnsemble(f"no trajectories in {path}")
    if spec is not None:
        want = fingerprint_spec(spec)
        got = meta.get("fingerprint", "missing")
        if want != got:
            warnings.warn(f"ensemble fingerprint {got} does not match spec {want}",
                          stacklevel=2)
    return PathEnsemble(paths=paths, seed=int(meta.get("seed", -1)),
                        direction=meta.get("direction", "forward"),
                        spec_fingerprint=meta.get("fingerprint", "opaque"))
