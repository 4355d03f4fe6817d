"""Statistical validation of the reversal formulas.

Empirical backward intensities are counted on reversed sample paths
(jump count / occupation time per cell) and compared cell by cell against
the flux-solved backward kernel; the carre du champ and the integration by
parts residual close the loop between the solver and the generator identity.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import ProcessSpec, StateSpace
from .errors import BinMismatch, EmptyEnsemble
from .marginals import MarginalFlow
from .reversal import BackwardCharacteristics
from .simulate import PathEnsemble, reverse_path

_FMT = "%.17g"
_GRAD_STEP = 1e-5


class _Binner:
    """Maps state points to bin indices: finite states or a 1-d regular grid."""

    def __init__(self, bins):
        if isinstance(bins, StateSpace):
            if bins.kind != "finite":
                raise ValueError("state binning needs a finite space")
            self.points = bins.embedding
            self.n = bins.n_states
            self._space = bins
            self._edges = None
            self._integer_line = (bins.dim == 1 and np.array_equal(
                self.points[:, 0], np.arange(self.n)))
        else:
            edges = np.asarray(bins, dtype=float).ravel()
            if edges.size < 2:
                raise ValueError("need at least two bin edges")
            self._edges = edges
            self.n = edges.size - 1
            self.points = (0.5 * (edges[1:] + edges[:-1])).reshape(-1, 1)
            self._space = None
            self._integer_line = False

    def index(self, x) -> int:
        if self._integer_line:
            return min(max(int(x[0] + 0.5), 0), self.n - 1)
        if self._space is not None:
            return self._space.index_of(x)
        i = int(np.searchsorted(self._edges, float(x[0]), side="right")) - 1
        if i < 0 or i >= self.n:
            raise ValueError(f"state {x} outside the bin edges")
        return i


@dataclass
class IntensityEstimate:
    """Backward jump-rate estimates on (time bin) x (from bin) x (to bin).

    Cells are indexed in *original* time: a reversed-path jump at reversed
    time tau is recorded at t = T - tau, which is where the backward kernel
    J_back(t, .) of the theory lives.
    """

    time_edges: np.ndarray             # (nt+1,)
    points: np.ndarray                 # (n, d)
    counts: np.ndarray                 # (nt, n, n)
    occupancy: np.ndarray              # (nt, n)
    n_paths: int

    def rate(self, tb: int, i: int, j: int) -> float:
        occ = self.occupancy[tb, i]
        # unvisited cells are unusable, not zero-rate
        return self.counts[tb, i, j] / occ if occ > 0 else math.nan

    def stderr(self, tb: int, i: int, j: int) -> float:
        occ = self.occupancy[tb, i]
        if occ <= 0:
            return math.nan
        c = self.counts[tb, i, j]
        return math.sqrt(c) / occ if c > 0 else 0.0


def estimate_backward_intensity(ensemble: PathEnsemble, time_edges, bins,
                                occupancy_substep: Optional[float] = None
                                ) -> IntensityEstimate:
    """Reverse every path, count jumps and accumulate occupation per cell.

    rate = count / occupation time, stderr = sqrt(count) / occupation time
    (Poisson approximation).  With a drift flow, occupancy attribution uses
    midpoint substeps of the given length (default T/200).
    """
    if not ensemble.paths:
        raise EmptyEnsemble("cannot estimate intensities from an empty ensemble")
    binner = _Binner(bins)
    T = ensemble.horizon
    edges = np.asarray(time_edges, dtype=float)
    if edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("time edges must be strictly increasing")
    nt = edges.size - 1
    counts = np.zeros((nt, binner.n, binner.n), dtype=np.int64)
    occ = np.zeros((nt, binner.n))
    sub = occupancy_substep if occupancy_substep is not None else T / 200.0
    lo_e, hi_e = edges[:-1], edges[1:]

    def add_occupancy(a, b, i):
        # reversed-time segment [a, b) maps to original [T-b, T-a)
        o_lo, o_hi = T - b, T - a
        overlap = np.clip(np.minimum(hi_e, o_hi) - np.maximum(lo_e, o_lo), 0.0, None)
        occ[:, i] += overlap

    for traj in ensemble.paths:
        rev = reverse_path(traj)
        t_prev = 0.0
        x = rev.initial_state
        for t_ev, xi, post in zip(rev.times, rev.jumps, rev.states[1:]):
            if rev.flow is None:
                add_occupancy(t_prev, t_ev, binner.index(x))
                x_pre = x
            else:
                s = t_prev
                while s < t_ev:
                    s2 = min(s + sub, t_ev)
                    mid = rev.flow.advance(t_prev, x, 0.5 * (s + s2))
                    add_occupancy(s, s2, binner.index(mid))
                    s = s2
                x_pre = rev.flow.advance(t_prev, x, t_ev)
            t_orig = T - t_ev
            tb = int(np.searchsorted(edges, t_orig, side="right")) - 1
            if 0 <= tb < nt:
                counts[tb, binner.index(x_pre), binner.index(x_pre + xi)] += 1
            x = post
            t_prev = t_ev
        if rev.flow is None:
            add_occupancy(t_prev, T, binner.index(x))
        else:
            s = t_prev
            while s < T:
                s2 = min(s + sub, T)
                mid = rev.flow.advance(t_prev, x, 0.5 * (s + s2))
                add_occupancy(s, s2, binner.index(mid))
                s = s2
    return IntensityEstimate(time_edges=edges, points=binner.points,
                             counts=counts, occupancy=occ,
                             n_paths=len(ensemble.paths))


# ---------------------------------------------------------------------------
# comparison against the solved backward kernel
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CellRecord:
    t_lo: float
    t_hi: float
    from_idx: int
    to_idx: int
    empirical: float
    theory: float            # occupation-weighted bin average of J_back
    theory_mid: float        # J_back at the slice nearest the bin midpoint
    stderr: float
    z: float
    usable: bool
    count: int
    occupancy: float

    @property
    def discretization(self) -> float:
        return abs(self.theory - self.theory_mid)


@dataclass(frozen=True)
class ReversalReport:
    cells: tuple
    n_usable: int
    frac_within_3: float
    frac_within_4: float
    worst: Optional[CellRecord]
    verdict: bool                  # >=99% within 4 sigma and >=95% within 3

    @property
    def verdict_line(self) -> str:
        return "VERDICT: PASS" if self.verdict else "VERDICT: FAIL"


def compare_reversal(estimate: IntensityEstimate, backward: BackwardCharacteristics,
                     weights: Optional[MarginalFlow] = None, *,
                     min_expected: float = 10.0, exclude_touching_zero: bool = True,
                     min_time: float = 0.0, rate_scale: float = 1.0) -> ReversalReport:
    """Per-cell z-scores of empirical vs theoretical backward rates.

    The theoretical cell value is the occupation-weighted average of the
    backward kernel over the slices inside the time bin (weights from the
    marginal flow when given, else uniform); the kernel value at the slice
    nearest the bin midpoint is reported alongside so the discretization gap
    is visible.  Cells with fewer than min_expected expected or observed
    events are unusable; time bins touching t = min_time are excluded by
    default because backward rates may blow up as t -> 0.
    """
    sl0 = backward.slices[0]
    if sl0.points.shape != estimate.points.shape or \
            not np.allclose(sl0.points, estimate.points, atol=1e-9):
        raise BinMismatch("estimate bins do not match the backward kernel states")
    if weights is not None and (weights.points.shape != estimate.points.shape
                                or not np.allclose(weights.points, estimate.points,
                                                   atol=1e-9)):
        raise BinMismatch("weight marginals do not match the estimate bins")

    n = estimate.points.shape[0]
    nt = estimate.time_edges.size - 1
    cells = []
    usable_z = []
    worst = None
    for tb in range(nt):
        lo, hi = float(estimate.time_edges[tb]), float(estimate.time_edges[tb + 1])
        if exclude_touching_zero and lo <= min_time:
            continue
        mid = 0.5 * (lo + hi)
        in_bin = np.nonzero((backward.times >= lo - 1e-12)
                            & (backward.times <= hi + 1e-12))[0]
        nearest = int(np.argmin(np.abs(backward.times - mid)))
        for i in range(n):
            occ = float(estimate.occupancy[tb, i])
            if occ <= 0.0:
                continue
            if in_bin.size:
                if weights is not None:
                    w = np.array([weights.probabilities_at(float(backward.times[k]))[i]
                                  for k in in_bin])
                else:
                    w = np.ones(in_bin.size)
                rows = np.stack([backward.slices[k].matrix[i] for k in in_bin])
                empty = np.array([backward.slices[k].empty_rows[i] for k in in_bin])
                w = np.where(empty, 0.0, w)
                wsum = w.sum()
                theory_row = (w[:, None] * rows).sum(axis=0) / wsum if wsum > 0 \
                    else np.zeros(n)
            else:
                theory_row = backward.slices[nearest].matrix[i]
            mid_row = backward.slices[nearest].matrix[i]
            for j in range(n):
                if i == j:
                    continue
                cnt = int(estimate.counts[tb, i, j])
                theory = float(theory_row[j]) * rate_scale
                theory_mid = float(mid_row[j]) * rate_scale
                if cnt == 0 and theory == 0.0:
                    continue
                emp = cnt / occ
                expected = theory * occ
                usable = expected >= min_expected or cnt >= min_expected
                se = math.sqrt(cnt) / occ if cnt > 0 else \
                    (math.sqrt(expected) / occ if expected > 0 else 0.0)
                z = (emp - theory) / se if se > 0 else math.inf
                rec = CellRecord(t_lo=lo, t_hi=hi, from_idx=i, to_idx=j,
                                 empirical=emp, theory=theory,
                                 theory_mid=theory_mid, stderr=se, z=z,
                                 usable=usable, count=cnt, occupancy=occ)
                cells.append(rec)
                if usable:
                    usable_z.append(abs(z))
                    if worst is None or abs(z) > abs(worst.z):
                        worst = rec
    n_usable = len(usable_z)
    frac3 = sum(1 for z in usable_z if z <= 3.0) / n_usable if n_usable else 0.0
    frac4 = sum(1 for z in usable_z if z <= 4.0) / n_usable if n_usable else 0.0
    verdict = n_usable > 0 and frac4 >= 0.99 and frac3 >= 0.95
    return ReversalReport(cells=tuple(cells), n_usable=n_usable,
                          frac_within_3=frac3, frac_within_4=frac4,
                          worst=worst, verdict=verdict)


def save_report_csv(report: ReversalReport, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t_lo", "t_hi", "from", "to", "empirical", "theoretical",
                         "theory_mid", "stderr", "z", "usable", "count", "occupancy"])
        for c in report.cells:
            writer.writerow([_FMT % c.t_lo, _FMT % c.t_hi, c.from_idx, c.to_idx,
                             _FMT % c.empirical, _FMT % c.theory,
                             _FMT % c.theory_mid, _FMT % c.stderr, _FMT % c.z,
                             int(c.usable), c.count, _FMT % c.occupancy])


def save_intensity_csv(estimate: IntensityEstimate, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t_lo", "t_hi", "from", "to", "count", "occupancy",
                         "rate", "stderr"])
        nt = estimate.time_edges.size - 1
        for tb in range(nt):
            for i in range(estimate.points.shape[0]):
                if estimate.occupancy[tb, i] <= 0:
                    continue
                for j in range(estimate.points.shape[0]):
                    if estimate.counts[tb, i, j] == 0:
                        continue
                    writer.writerow([
                        _FMT % estimate.time_edges[tb], _FMT % estimate.time_edges[tb + 1],
                        i, j, int(estimate.counts[tb, i, j]),
                        _FMT % estimate.occupancy[tb, i],
                        _FMT % estimate.rate(tb, i, j), _FMT % estimate.stderr(tb, i, j)])


# ---------------------------------------------------------------------------
# generators, carre du champ, IbP residual
# ---------------------------------------------------------------------------

def state_function(space: StateSpace, values) -> object:
    """Wrap a per-state vector as a function of the embedded point."""
    vals = np.asarray(values, dtype=float)

    def u(x):
        return float(vals[space.index_of(np.asarray(x, float))])

    u.values = vals
    return u


def _gradient(u, x, grad_u=None):
    if grad_u is not None:
        return np.asarray(grad_u(x), dtype=float)
    x = np.asarray(x, dtype=float)
    g = np.zeros(x.size)
    for a in range(x.size):
        e = np.zeros(x.size)
        e[a] = _GRAD_STEP
        g[a] = (u(x + e) - u(x - e)) / (2.0 * _GRAD_STEP)
    return g


def carre_du_champ(kernel, t, x, u, v) -> float:
    """Gamma(u, v)(x) = integral of [u(x+xi)-u(x)][v(x+xi)-v(x)] K(dxi)."""
    x = np.asarray(x, dtype=float)
    ux, vx = u(x), v(x)
    return kernel.integrate(t, x, lambda xi: (u(x + xi) - ux) * (v(x + xi) - vx))


def apply_generator(source, direction: str, u, t, x, grad_u=None) -> float:
    """b^delta . grad u + integral of [u(y)-u(x)-grad u . trunc(y-x)] J(dy)
    with the requested direction's drift and kernel."""
    x = np.asarray(x, dtype=float)
    if direction == "forward":
        if not isinstance(source, ProcessSpec):
            raise ValueError("forward generator needs a ProcessSpec")
        delta = float(source.delta)
        b = source.drift(t, x)
        ux = u(x)
        if delta == 0.0 and source.drift.is_zero:
            return source.kernel.integrate(t, x, lambda xi: u(x + xi) - ux)
        grad = _gradient(u, x, grad_u)
        jump_part = source.kernel.integrate(
            t, x, lambda xi: u(x + xi) - ux
            - (float(np.dot(grad, xi)) if np.linalg.norm(xi) <= delta and delta > 0 else 0.0))
        return float(np.dot(b, grad)) + jump_part
    if direction == "backward":
        if not isinstance(source, BackwardCharacteristics):
            raise ValueError("backward generator needs BackwardCharacteristics")
        sl = source.slice_at(t)
        i = int(np.argmin(np.sum((sl.points - x) ** 2, axis=1)))
        delta = float(source.delta)
        ux = u(x)
        total = 0.0
        grad = None
        if delta > 0.0:
            grad = _gradient(u, x, grad_u)
        for j, rate in enumerate(sl.matrix[i]):
            if rate <= 0.0:
                continue
            y = sl.points[j]
            val = u(y) - ux
            if delta > 0.0:
                d = y - x
                if float(np.linalg.norm(d)) <= delta:
                    val -= float(np.dot(grad, d))
            total += rate * val
        b = source.drift_at(t, x)
        if np.any(b != 0.0):
            if grad is None:
                grad = _gradient(u, x, grad_u)
            total += float(np.dot(b, grad))
        return total
    raise ValueError(f"unknown direction {direction!r}")


def ibp_residual(spec: ProcessSpec, backward: BackwardCharacteristics,
                 marginal: MarginalFlow, t: float, u, v) -> dict:
    """integral of [(Lfwd u + Lback u) v + Gamma(u, v)] dp_t.

    Exact summation against probability marginals (error_bar 0); histogram
    marginals give the Monte Carlo version with error_bar = 3 SE.
    """
    p = marginal.probabilities_at(t)
    pts = marginal.points
    vals = np.zeros(p.size)
    for i, mass in enumerate(p):
        if mass <= 0.0:
            continue
        x = pts[i]
        lf = apply_generator(spec, "forward", u, t, x)
        lb = apply_generator(backward, "backward", u, t, x)
        gamma = carre_du_champ(spec.kernel, t, x, u, v)
        vals[i] = (lf + lb) * v(x) + gamma
    residual = float(np.dot(p, vals))
    if marginal.kind == "probability":
        err = 0.0
    else:
        n = max(marginal.n_paths, 1)
        var = float(np.dot(p, (vals - residual) ** 2))
        err = 3.0 * math.sqrt(var / n)
    return {"residual": residual, "error_bar": err}
