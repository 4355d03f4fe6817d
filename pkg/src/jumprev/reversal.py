"""Backward characteristics of the time-reversed process.

The backward jump kernel is the unique solution of the flux balance

    p_t(y) Jback(t, y -> x) = p_t(x) Jfwd(t, x -> y),

solved slice by slice on the marginal grid, and the backward drift is

    bback(t, x) = -bfwd(t, x) + sum over y of trunc(y - x) (Jfwd + Jback)(x -> y),

which collapses to exactly -bfwd when delta = 0.  Closed-form reversals
(Levy mirror, reversible kernels) live here too.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import (DriftField, JumpKernel, LevyKernel, ProcessSpec,
                   TruncationDelta, effective_rate_matrix, truncate_jump)
from .errors import AbsoluteContinuityViolation
from .marginals import MarginalFlow

_FLUX_ORPHAN_TOL = 1e-12
_FMT = "%.17g"


def _sigma(points: np.ndarray) -> np.ndarray:
    """sigma(x, y) = 1 ^ |y - x|^2 on the embedded points: the weighted flux
    p(dx) sigma Jfwd(x -> dy) is finite whenever the quadratic jump probe is,
    which makes this the natural weight for the solvability check."""
    diff = points[:, None, :] - points[None, :, :]
    return np.minimum(np.sum(diff * diff, axis=2), 1.0)


@dataclass(frozen=True)
class KernelSlice:
    """Rates between labeled states/bins at one time."""

    t: float
    points: np.ndarray            # (n, d) embedded centers
    matrix: np.ndarray            # (n, n), zero diagonal
    empty_rows: np.ndarray        # (n,) bool: rows left unsolved (p_t = 0)

    def row(self, i: int) -> np.ndarray:
        return self.matrix[i]


@dataclass(frozen=True)
class FluxMeasure:
    """pi(dx, dy) = p(x) J(x -> y) and its transpose at one time."""

    t: float
    pi: np.ndarray
    pi_tilde: np.ndarray


def flux_measure(p: np.ndarray, rates: np.ndarray, t: float = 0.0) -> FluxMeasure:
    pi = np.asarray(p, float)[:, None] * np.asarray(rates, float)
    return FluxMeasure(t=t, pi=pi, pi_tilde=pi.T.copy())


def solve_flux_matrix(p: np.ndarray, forward: np.ndarray, points: np.ndarray,
                      t: float = 0.0, orphan_tol: float = _FLUX_ORPHAN_TOL) -> KernelSlice:
    """Solve the flux balance for the backward rate matrix at one time.

    Rows at states with p(y) = 0 are returned empty and flagged; if the
    sigma-weighted flux into such a state exceeds the tolerance the equation
    has no solution there and AbsoluteContinuityViolation is raised.
    """
    p = np.asarray(p, dtype=float)
    forward = np.asarray(forward, dtype=float)
    n = p.size
    if forward.shape != (n, n):
        raise ValueError("forward rates must be square over the marginal states")
    empty = p <= 0.0
    if np.any(empty):
        influx = (p[:, None] * forward * _sigma(points)).sum(axis=0)
        offenders = [(t, int(y), float(influx[y]))
                     for y in np.nonzero(empty)[0] if influx[y] > orphan_tol]
        if offenders:
            worst = max(offenders, key=lambda o: o[2])
            raise AbsoluteContinuityViolation(
                f"flux {worst[2]:.3e} flows into zero-mass state {worst[1]} "
                f"at t={t:.6g}: the flux equation has no solution there",
                offenders=offenders)
    backward = np.zeros_like(forward)
    alive = ~empty
    inv = np.zeros(n)
    inv[alive] = 1.0 / p[alive]
    backward[alive, :] = (inv[alive, None]) * (forward.T[alive, :] * p[None, :])
    np.fill_diagonal(backward, 0.0)
    return KernelSlice(t=t, points=np.asarray(points, float), matrix=backward,
                       empty_rows=empty)


def solve_flux_equation(marginal: MarginalFlow, spec: ProcessSpec, t: float,
                        orphan_tol: float = _FLUX_ORPHAN_TOL) -> KernelSlice:
    """Backward kernel slice at grid time t from the marginal and the spec's
    forward kernel (finite/lattice states or histogram bins)."""
    p = marginal.probabilities_at(t)
    forward = forward_rate_matrix(spec, marginal, t)
    return solve_flux_matrix(p, forward, marginal.points, t=t, orphan_tol=orphan_tol)


def forward_rate_matrix(spec: ProcessSpec, marginal: MarginalFlow, t: float) -> np.ndarray:
    """Forward rates between the marginal's bins at time t."""
    if spec.space.kind == "finite" and marginal.n_bins == spec.space.n_states:
        return effective_rate_matrix(spec, t)
    # binned continuous/lattice case: route kernel atoms between bin centers
    points = marginal.points
    n = points.shape[0]
    out = np.zeros((n, n))
    for i in range(n):
        x = points[i]
        at = spec.kernel.atoms(t, x)
        if at is None:
            raise ValueError("binned flux solve needs an atomic kernel representation")
        xis, rates = at
        for xi, r in zip(xis, rates):
            if r <= 0:
                continue
            target = x + xi
            j = int(np.argmin(np.sum((points - target) ** 2, axis=1)))
            if j != i:
                out[i, j] += r
    return out


def backward_density_slice(marginal: MarginalFlow, spec: ProcessSpec, t: float,
                           xi_grid: np.ndarray):
    """Backward jump density at displacement -xi for a 1-d Density kernel.

    Uses the shifted-marginal ratio form: the backward rate of jumping from
    y to y - xi has density (p(y - xi) / p(y)) k(y - xi, xi) on the xi grid.
    Returns (values (n_bins, n_xi), max_ratio) where max_ratio is the largest
    shifted-mass ratio observed (reported, not certified).
    """
    p = marginal.probabilities_at(t)
    points = marginal.points[:, 0]
    if marginal.points.shape[1] != 1:
        raise ValueError("density backward slices are 1-d only")
    dens = spec.kernel.density_part(t, marginal.points[0])
    if dens is None:
        raise ValueError("spec kernel has no density part")
    width = points[1] - points[0] if points.size > 1 else 1.0
    vals = np.zeros((points.size, xi_grid.size))
    max_ratio = 0.0
    for b, y in enumerate(points):
        if p[b] <= 0:
            continue
        for k_i, xi in enumerate(xi_grid):
            src = y - xi
            sb = int(np.argmin(np.abs(points - src)))
            if abs(points[sb] - src) > 0.5 * width or p[sb] <= 0:
                continue
            ratio = p[sb] / p[b]
            max_ratio = max(max_ratio, ratio)
            g, _ = spec.kernel.density_part(t, np.array([src]))
            vals[b, k_i] = ratio * g(float(xi))
    return vals, max_ratio


# ---------------------------------------------------------------------------
# backward drift
# ---------------------------------------------------------------------------

def backward_drift(forward_drift: DriftField, forward_kernel: JumpKernel,
                   backward_slice: Optional[KernelSlice],
                   delta: TruncationDelta, t: float, x) -> np.ndarray:
    """b_back(t,x) = -b_fwd(t,x) + integral of trunc(y-x) d(Jfwd + Jback).

    Exactly -b_fwd when delta = 0.  Raises QuadratureDivergence when the
    truncated first moment of a density kernel does not converge.
    """
    x = np.asarray(x, dtype=float)
    minus_b = -forward_drift(t, x)
    d = float(delta)
    if d == 0.0:
        return minus_b
    fwd_moment = forward_kernel.mean_truncated(t, x, 0.0, d)
    if backward_slice is None:
        raise ValueError("delta > 0 needs a solved backward kernel slice")
    i = int(np.argmin(np.sum((backward_slice.points - x) ** 2, axis=1)))
    back_moment = np.zeros_like(minus_b)
    for j, rate in enumerate(backward_slice.matrix[i]):
        if rate > 0.0:
            back_moment += rate * truncate_jump(backward_slice.points[j] - x, d)
    return minus_b + fwd_moment + back_moment


@dataclass(frozen=True)
class SliceDiagnostic:
    t: float
    orphan_mass: float
    n_empty_rows: int
    passed: bool


@dataclass(frozen=True)
class BackwardCharacteristics:
    """Backward drift and kernel on the marginal grid (step functions in t)."""

    times: np.ndarray
    slices: tuple                      # KernelSlice per grid time
    delta: TruncationDelta
    backward_drift_field: DriftField
    diagnostics: tuple                 # SliceDiagnostic per grid time

    def slice_at(self, t: float) -> KernelSlice:
        i = int(np.argmin(np.abs(self.times - t)))
        return self.slices[i]

    def drift_at(self, t: float, x) -> np.ndarray:
        return self.backward_drift_field(t, x)


def solve_backward_characteristics(spec: ProcessSpec, marginal: MarginalFlow,
                                   orphan_tol: float = _FLUX_ORPHAN_TOL
                                   ) -> BackwardCharacteristics:
    """Solve the flux equation on every marginal grid time and assemble the
    backward drift per the drift identity (no interpolation between slices)."""
    slices = []
    diags = []
    for t in marginal.times:
        sl = solve_flux_equation(marginal, spec, float(t), orphan_tol=orphan_tol)
        p = marginal.probabilities_at(float(t))
        fwd = forward_rate_matrix(spec, marginal, float(t))
        influx = (p[:, None] * fwd * _sigma(marginal.points)).sum(axis=0)
        orphan = float(influx[sl.empty_rows].sum()) if np.any(sl.empty_rows) else 0.0
        diags.append(SliceDiagnostic(t=float(t), orphan_mass=orphan,
                                     n_empty_rows=int(sl.empty_rows.sum()),
                                     passed=orphan <= orphan_tol))
        slices.append(sl)
    times = marginal.times.copy()
    slices = tuple(slices)
    delta = spec.delta

    def b_back(t, x, _slices=slices, _times=times, _spec=spec):
        i = int(np.argmin(np.abs(_times - t)))
        return backward_drift(_spec.drift, _spec.kernel, _slices[i],
                              _spec.delta, float(_times[i]), x)

    drift_field = DriftField(fn=b_back, dim=spec.space.dim,
                             is_zero=False, expressions=None)
    return BackwardCharacteristics(times=times, slices=slices, delta=delta,
                                   backward_drift_field=drift_field,
                                   diagnostics=tuple(diags))


# ---------------------------------------------------------------------------
# closed-form reversals and diagnostics
# ---------------------------------------------------------------------------

def levy_reverse(b, levy: LevyKernel):
    """Reversal of a Levy triplet: (b, Lambda) -> (-b, mirror of Lambda)."""
    if not isinstance(levy, LevyKernel):
        raise ValueError("levy_reverse needs the state-independent Levy variant")
    return -np.asarray(b, dtype=float), levy.mirror()


@dataclass(frozen=True)
class ReversibilityReport:
    is_reversible: bool
    max_abs_asymmetry: float        # max |pi - pi_tilde| entry
    max_ratio_deviation: float      # sup |pi_tilde/pi - 1| over pi > floor


def reversibility_check(p: np.ndarray, rates: np.ndarray, tol: float = 1e-10,
                        floor: float = 1e-12) -> ReversibilityReport:
    """Detailed balance of the flux measure pi(x,y) = p(x) J(x->y)."""
    fm = flux_measure(p, rates)
    diff = float(np.max(np.abs(fm.pi - fm.pi_tilde))) if fm.pi.size else 0.0
    mask = fm.pi > floor
    dev = float(np.max(np.abs(fm.pi_tilde[mask] / fm.pi[mask] - 1.0))) if np.any(mask) else 0.0
    return ReversibilityReport(is_reversible=diff <= tol,
                               max_abs_asymmetry=diff,
                               max_ratio_deviation=dev)


@dataclass(frozen=True)
class AbsoluteContinuityReport:
    passed: bool
    orphan_mass: float
    offenders: tuple                 # (state index, incoming sigma-mass)


def check_absolute_continuity(p: np.ndarray, rates: np.ndarray, points: np.ndarray,
                              tol: float = _FLUX_ORPHAN_TOL) -> AbsoluteContinuityReport:
    """Mass of the sigma-weighted image measure landing on zero-mass states."""
    p = np.asarray(p, dtype=float)
    influx = (p[:, None] * np.asarray(rates, float) * _sigma(np.asarray(points, float))
              ).sum(axis=0)
    offenders = tuple((int(y), float(influx[y]))
                      for y in np.nonzero(p <= 0.0)[0] if influx[y] > tol)
    orphan = float(sum(m for _, m in offenders))
    return AbsoluteContinuityReport(passed=not offenders, orphan_mass=orphan,
                                    offenders=offenders)


# ---------------------------------------------------------------------------
# CSV export
# ---------------------------------------------------------------------------

def save_backward_kernel_csv(bc: BackwardCharacteristics, path) -> None:
    """(t, from, to, rate) triples over all grid slices; empty rows skipped."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "from", "to", "rate"])
        for sl in bc.slices:
            n = sl.matrix.shape[0]
            for i in range(n):
                if sl.empty_rows[i]:
                    continue
                for j in range(n):
                    if sl.matrix[i, j] > 0.0:
                        writer.writerow([_FMT % sl.t, i, j, _FMT % sl.matrix[i, j]])


def save_backward_drift_csv(bc: BackwardCharacteristics, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        d = bc.slices[0].points.shape[1]
        writer.writerow(["t", "state"] + [f"b{k}" for k in range(d)])
        for sl in bc.slices:
            for i, x in enumerate(sl.points):
                if sl.empty_rows[i]:
                    continue
                b = bc.drift_at(sl.t, x)
                writer.writerow([_FMT % sl.t, i] + [_FMT % c for c in b])


def save_ac_report_csv(bc: BackwardCharacteristics, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "orphan_mass", "n_empty_rows", "passed"])
        for dg in bc.diagnostics:
            writer.writerow([_FMT % dg.t, _FMT % dg.orphan_mass,
                             dg.n_empty_rows, int(dg.passed)])
