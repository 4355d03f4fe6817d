"""Marginal flow t -> p_t: exact master-equation integration on finite state
spaces (the oracle for everything downstream) and empirical histograms from
path ensembles.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from .core import ProcessSpec, StateSpace, effective_rate_matrix
from .errors import EmptyEnsemble, NegativeProbability
from .simulate import PathEnsemble, state_at

_MASS_TOL = 1e-9
_FMT = "%.17g"


@dataclass
class MarginalFlow:
    """Time-indexed family of distributions on a fixed set of bins.

    kind "probability": exact vectors over finite states (rows sum to 1).
    kind "histogram":   raw path counts per bin (rows sum to n_paths).
    kind "density":     smoothed nonnegative density values on bin centers.
    """

    kind: str
    times: np.ndarray                  # (nt,)
    values: np.ndarray                 # (nt, nbins)
    points: np.ndarray                 # (nbins, d) state embeddings / bin centers
    n_paths: int = 0
    bandwidth: Optional[float] = None
    renormalization_drift: float = 0.0  # max |1 - raw slice mass| seen
    bin_edges: Optional[list] = None    # per-dim edge arrays for histograms

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        self.points = np.asarray(self.points, dtype=float)
        if self.points.ndim == 1:
            self.points = self.points.reshape(-1, 1)
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("time grid must be strictly increasing")
        if self.values.shape != (self.times.size, self.points.shape[0]):
            raise ValueError("values must be (n_times, n_bins)")
        if np.any(self.values < 0):
            raise ValueError("marginal flow has negative entries")

    @property
    def n_bins(self) -> int:
        return self.points.shape[0]

    def time_index(self, t: float) -> int:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-9 + 1e-9 * abs(t):
            raise ValueError(f"t={t} is not on the marginal grid")
        return i

    def slice_at(self, t: float) -> np.ndarray:
        return self.values[self.time_index(t)].copy()

    def probabilities_at(self, t: float) -> np.ndarray:
        row = self.slice_at(t)
        total = row.sum()
        return row / total if total > 0 else row


def _kernel_is_homogeneous(spec: ProcessSpec) -> bool:
    q0 = effective_rate_matrix(spec, 0.0)
    for t in (0.37 * spec.horizon, spec.horizon):
        if not np.array_equal(q0, effective_rate_matrix(spec, t)):
            return False
    return True


def master_equation_marginals(spec: ProcessSpec, time_grid) -> MarginalFlow:
    """Solve dp/dt = p^T Q(t) on a finite space along the given grid.

    Time-homogeneous chains use the matrix exponential (scaling-and-squaring
    Pade); inhomogeneous ones fall back to high-order adaptive integration.
    Each slice is conservation-checked to 1e-9 and renormalized, with the
    worst drift recorded on the returned flow.
    """
    space = spec.space
    if space.kind != "finite":
        raise ValueError("master equation requires a finite state space")
    grid = np.asarray(time_grid, dtype=float)
    if grid.ndim != 1 or grid.size < 1 or np.any(np.diff(grid) <= 0):
        raise ValueError("time grid must be strictly increasing")
    if grid[0] < 0 or grid[-1] > spec.horizon + 1e-12:
        raise ValueError("time grid must lie inside [0, T]")

    law = spec.initial_law
    if law.kind == "vector":
        p0 = law.probabilities.astype(float)
    elif law.kind == "point":
        p0 = np.zeros(space.n_states)
        p0[space.index_of(law.state)] = 1.0
    else:
        raise ValueError("master equation needs a point or vector initial law")

    if _kernel_is_homogeneous(spec):
        q = effective_rate_matrix(spec, 0.0)
        gen = q - np.diag(q.sum(axis=1))
        rows = [p0 @ expm(gen * t) for t in grid]
    else:
        def rhs(t, p):
            q = effective_rate_matrix(spec, t)
            gen = q - np.diag(q.sum(axis=1))
            return p @ gen

        sol = solve_ivp(rhs, (0.0, float(grid[-1])), p0, t_eval=grid,
                        method="DOP853", rtol=1e-10, atol=1e-14)
        if not sol.success:
            raise NegativeProbability(f"master equation integration failed: {sol.message}")
        rows = list(sol.y.T)

    values = np.empty((grid.size, space.n_states))
    drift = 0.0
    for i, row in enumerate(rows):
        if np.any(row < -_MASS_TOL):
            raise NegativeProbability(
                f"negative probability {row.min():.3e} at t={grid[i]:.6g}")
        row = np.clip(row, 0.0, None)
        total = row.sum()
        if abs(total - 1.0) > _MASS_TOL:
            raise NegativeProbability(
                f"mass drifted to {total!r} at t={grid[i]:.6g}")
        drift = max(drift, abs(total - 1.0))
        values[i] = row / total
    return MarginalFlow(kind="probability", times=grid, values=values,
                        points=space.embedding, renormalization_drift=drift)


# ---------------------------------------------------------------------------
# empirical marginals
# ---------------------------------------------------------------------------

def _states_on_grid(traj, grid):
    """(nt, d) states of one trajectory at the grid times (cadlag)."""
    idx = np.searchsorted(traj.times, grid, side="right")
    if traj.flow is None:
        return traj.states[idx]
    return np.vstack([state_at(traj, float(t)) for t in grid])


def _grid_bins(edges_per_dim):
    edges = [np.asarray(e, dtype=float) for e in edges_per_dim]
    centers_1d = [0.5 * (e[1:] + e[:-1]) for e in edges]
    mesh = np.meshgrid(*centers_1d, indexing="ij")
    centers = np.stack([m.ravel() for m in mesh], axis=1)
    return edges, centers


def empirical_marginals(ensemble: PathEnsemble, time_grid, bins,
                        smooth_bandwidth: Optional[float] = None) -> MarginalFlow:
    """Histogram of state_at over all paths per time slice.

    bins is either a finite StateSpace (one bin per state) or a list of bin
    edge arrays, one per dimension.  Optional product-kernel smoothing turns
    the histogram into a strictly positive density estimate.
    """
    if not ensemble.paths:
        raise EmptyEnsemble("cannot bin an empty ensemble")
    grid = np.asarray(time_grid, dtype=float)
    n_paths = len(ensemble.paths)

    if isinstance(bins, StateSpace):
        if bins.kind != "finite":
            raise ValueError("StateSpace binning requires a finite space")
        points = bins.embedding
        n_bins = bins.n_states
        integer_line = (bins.dim == 1
                        and np.array_equal(points[:, 0], np.arange(n_bins)))
        counts = np.zeros((grid.size, n_bins), dtype=np.int64)
        for traj in ensemble.paths:
            st = _states_on_grid(traj, grid)
            if integer_line:
                ids = np.clip(np.rint(st[:, 0]).astype(int), 0, n_bins - 1)
            else:
                ids = np.array([bins.index_of(s) for s in st])
            counts[np.arange(grid.size), ids] += 1
        edges = None
    else:
        edges, points = _grid_bins(bins)
        n_bins = points.shape[0]
        shape = tuple(e.size - 1 for e in edges)
        counts = np.zeros((grid.size, n_bins), dtype=np.int64)
        for traj in ensemble.paths:
            st = _states_on_grid(traj, grid)
            flat = np.zeros(grid.size, dtype=np.int64)
            ok = np.ones(grid.size, dtype=bool)
            for d, e in enumerate(edges):
                ix = np.searchsorted(e, st[:, d], side="right") - 1
                ok &= (ix >= 0) & (ix < shape[d])
                flat = flat * shape[d] + np.clip(ix, 0, shape[d] - 1)
            if not np.all(ok):
                raise ValueError("bins do not cover the ensemble support")
            counts[np.arange(grid.size), flat] += 1

    if smooth_bandwidth is None:
        return MarginalFlow(kind="histogram", times=grid, values=counts.astype(float),
                            points=points, n_paths=n_paths, bin_edges=edges)

    # product-kernel smoothing on the bin centers, floored strictly positive
    d = points.shape[1]
    bw = float(smooth_bandwidth)
    sq = np.sum((points[:, None, :] - points[None, :, :]) ** 2, axis=2)
    w = np.exp(-0.5 * sq / bw ** 2) / (math.sqrt(2 * math.pi) * bw) ** d
    vals = counts @ w / n_paths
    vals = np.maximum(vals, 1e-12)
    return MarginalFlow(kind="density", times=grid, values=vals, points=points,
                        n_paths=n_paths, bandwidth=bw, bin_edges=edges)


def silverman_bandwidth(samples: np.ndarray) -> float:
    """1.06 sigma n^(-1/5), the classical product-kernel default."""
    s = float(np.std(samples))
    n = max(samples.shape[0], 2)
    return 1.06 * (s if s > 0 else 1.0) * n ** (-0.2)


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def mean_tv_distance(flow: MarginalFlow, oracle: MarginalFlow) -> float:
    """Average TV distance between (normalized) slices on a shared grid."""
    if flow.values.shape != oracle.values.shape:
        raise ValueError("flows are not on the same grid")
    dists = []
    for i in range(flow.times.size):
        p = flow.values[i] / max(flow.values[i].sum(), 1e-300)
        q = oracle.values[i] / max(oracle.values[i].sum(), 1e-300)
        dists.append(total_variation(p, q))
    return float(np.mean(dists))


# ---------------------------------------------------------------------------
# CSV round trip
# ---------------------------------------------------------------------------

def save_marginals_csv(flow: MarginalFlow, path) -> None:
    """Long format: one row per (t, bin) with columns t, c0.., mass."""
    d = flow.points.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t"] + [f"c{k}" for k in range(d)] + ["mass"])
        for i, t in enumerate(flow.times):
            for b in range(flow.n_bins):
                writer.writerow([_FMT % t]
                                + [_FMT % c for c in flow.points[b]]
                                + [_FMT % flow.values[i, b]])


def load_marginals_csv(path, kind: str = "probability") -> MarginalFlow:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[0] != "t" or header[-1] != "mass":
            raise ValueError(f"unexpected marginals header {header}")
        d = len(header) - 2
        rows = [(float(r[0]), tuple(float(c) for c in r[1:1 + d]), float(r[-1]))
                for r in reader]
    if not rows:
        raise ValueError("empty marginals file")
    times = sorted({r[0] for r in rows})
    points = sorted({r[1] for r in rows})
    t_index = {t: i for i, t in enumerate(times)}
    p_index = {p: i for i, p in enumerate(points)}
    values = np.zeros((len(times), len(points)))
    for t, p, m in rows:
        values[t_index[t], p_index[p]] = m
    return MarginalFlow(kind=kind, times=np.array(times), values=values,
                        points=np.array([list(p) for p in points]))
