"""Girsanov tilting of a reference jump process.

A nonnegative tilt j(t, x, y) multiplies the reference kernel; for delta > 0
the truncated first moment of (j - 1) corrects the drift.  The relative
entropy of the tilted law splits into the initial-law term plus the running
integral of h(j) against p_t(dx) Jref(x -> dy) dt, and the pathwise
log-likelihood gives an independent Monte Carlo oracle for the same number.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import DriftField, ProcessSpec, TiltedKernel, entropy_h
from .errors import DriftCorrectionDivergence, QuadratureDivergence
from .expressions import compile_expression
from .marginals import MarginalFlow

_ENTROPY_CAP = 1e12
_FMT = "%.17g"

# Gauss-Legendre nodes/weights on [0, 1] for the along-path compensator
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)
_GL_NODES = 0.5 * (_GL_NODES + 1.0)
_GL_WEIGHTS = 0.5 * _GL_WEIGHTS


@dataclass(frozen=True)
class TiltFunction:
    """Nonnegative density j(t, x, y) against a reference jump kernel."""

    evaluate: object
    expression: Optional[str] = None
    time_independent: bool = False

    @classmethod
    def from_expression(cls, text: str, dim: int = 1) -> "TiltFunction":
        fn = compile_expression(text, n_x=dim, n_y=dim)
        return cls(evaluate=lambda t, x, y: fn(t, x=x, y=y), expression=text,
                   time_independent="t" not in fn.variables)

    @classmethod
    def constant(cls, c: float) -> "TiltFunction":
        if c < 0:
            raise ValueError("tilt must be nonnegative")
        return cls(evaluate=lambda t, x, y: float(c), expression=repr(float(c)),
                   time_independent=True)

    def __call__(self, t, x, y) -> float:
        v = float(self.evaluate(t, np.asarray(x, float), np.asarray(y, float)))
        if v < 0:
            raise ValueError("tilt evaluated negative")
        return v


@dataclass(frozen=True)
class EntropyReport:
    initial_term: float
    running_term: float
    total: float
    error_estimate: float
    diverged: bool = False


def tilt_drift_correction(kernel, tilt: TiltFunction, delta: float, t, x) -> np.ndarray:
    """integral of trunc(y - x) (j(t,x,y) - 1) Kref(dxi) for delta > 0."""
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.size)
    try:
        for axis in range(x.size):
            def f(xi, _a=axis):
                n = float(np.linalg.norm(xi))
                if n > delta:
                    return 0.0
                return xi[_a] * (tilt(t, x, x + xi) - 1.0)
            out[axis] = kernel.integrate(t, x, f)
    except QuadratureDivergence as exc:
        raise DriftCorrectionDivergence(
            "truncated first moment of (j - 1) diverges") from exc
    return out


def tilt_process(reference: ProcessSpec, tilt: TiltFunction) -> ProcessSpec:
    """Spec of the tilted process: kernel j*Kref; drift corrected when
    delta > 0, untouched when delta = 0 (only the jump kernel changes)."""
    tilted_kernel = TiltedKernel(base=reference.kernel, tilt=tilt.evaluate,
                                 tilt_expression=tilt.expression)
    delta = float(reference.delta)
    if delta == 0.0:
        drift = reference.drift
    else:
        base_drift = reference.drift
        base_kernel = reference.kernel

        def corrected(t, x):
            return base_drift(t, x) + tilt_drift_correction(
                base_kernel, tilt, delta, t, x)

        # probe once so a divergent correction fails at build time
        for t, x in reference.probe_points(n_extra=1):
            corrected(t, x)
        drift = DriftField(fn=corrected, dim=base_drift.dim, is_zero=False,
                           expressions=None)
    return ProcessSpec(space=reference.space, drift=drift, kernel=tilted_kernel,
                       delta=reference.delta, initial_law=reference.initial_law,
                       horizon=reference.horizon)


def _running_integrand(reference: ProcessSpec, tilt: TiltFunction,
                       marginal: MarginalFlow, t: float) -> float:
    """sum over x of p_t(x) * integral of h(j(t,x,y)) Kref_{t,x}(dxi)."""
    p = marginal.probabilities_at(t)
    total = 0.0
    for i, mass in enumerate(p):
        if mass <= 0.0:
            continue
        x = marginal.points[i]
        val = reference.kernel.integrate(
            t, x, lambda xi: entropy_h(tilt(t, x, x + xi)))
        total += mass * val
    return total


def relative_entropy(reference: ProcessSpec, tilt: TiltFunction,
                     marginal: MarginalFlow, initial_entropy: float = 0.0
                     ) -> EntropyReport:
    """Initial term plus the running h(j) integral on the marginal grid.

    The marginal must belong to the *tilted* process.  Trapezoid rule in t;
    the reported error estimate is |trapezoid - midpoint| on the same grid.
    Running terms beyond 1e12 are reported as +inf (DivergentEntropy).
    """
    times = marginal.times
    vals = np.array([_running_integrand(reference, tilt, marginal, float(t))
                     for t in times])
    if not np.all(np.isfinite(vals)):
        return EntropyReport(initial_term=initial_entropy, running_term=math.inf,
                             total=math.inf, error_estimate=math.inf, diverged=True)
    running = float(np.trapezoid(vals, times))
    if times.size >= 3 and times.size % 2 == 1:
        mid = 0.0
        for k in range(0, times.size - 2, 2):
            mid += (times[k + 2] - times[k]) * vals[k + 1]
        error = abs(running - mid)
    elif times.size >= 3:
        keep = list(range(0, times.size, 2))
        if keep[-1] != times.size - 1:
            keep.append(times.size - 1)
        coarse = float(np.trapezoid(vals[keep], times[keep]))
        error = abs(running - coarse)
    else:
        error = math.inf
    if running > _ENTROPY_CAP:
        return EntropyReport(initial_term=initial_entropy, running_term=math.inf,
                             total=math.inf, error_estimate=error, diverged=True)
    return EntropyReport(initial_term=initial_entropy, running_term=running,
                         total=initial_entropy + running, error_estimate=error)


def path_log_likelihood(reference: ProcessSpec, tilt: TiltFunction, traj) -> float:
    """log dP/dR along one path: sum of log j at the jumps minus the
    compensator integral of (j - 1) against the reference kernel.

    Requires a finite-activity reference.  A jump with j = 0 makes the
    density vanish; -inf is returned.
    """
    kernel = reference.kernel
    T = traj.horizon
    flow = traj.flow
    # constant-in-time rates and tilt make the compensator exact per segment
    static = flow is None and tilt.time_independent and kernel.time_homogeneous()

    def gain(t, x):
        return kernel.integrate(t, x, lambda xi: tilt(t, x, x + xi) - 1.0)

    def segment(t0, x0, t1):
        seg = t1 - t0
        if seg <= 0:
            return 0.0
        if static:
            return seg * gain(t0, x0)
        acc = 0.0
        for node, w in zip(_GL_NODES, _GL_WEIGHTS):
            s = t0 + node * seg
            xs = x0 if flow is None else flow.advance(t0, x0, s)
            acc += w * seg * gain(s, xs)
        return acc

    log_term = 0.0
    comp = 0.0
    t_prev = 0.0
    x = traj.initial_state.copy()
    for t_ev, xi in zip(traj.times, traj.jumps):
        comp += segment(t_prev, x, t_ev)
        x_pre = x if flow is None else flow.advance(t_prev, x, t_ev)
        j = tilt(t_ev, x_pre, x_pre + xi)
        if j <= 0.0:
            return -math.inf
        log_term += math.log(j)
        x = x_pre + xi
        t_prev = t_ev
    comp += segment(t_prev, x, T)
    return log_term - comp


def save_entropy_csv(rows, path) -> None:
    """Rows of (n_time_points, EntropyReport) as a flat CSV."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n_time_points", "initial_term", "running_term",
                         "total", "quadrature_error"])
        for n, rep in rows:
            writer.writerow([n, _FMT % rep.initial_term, _FMT % rep.running_term,
                             _FMT % rep.total, _FMT % rep.error_estimate])
