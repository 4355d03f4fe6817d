"""Domain types for jump-process specifications.

State spaces, drift fields, jump kernels in their several representations,
truncation, initial laws, and the numeric hypothesis probes that decide
whether a kernel is finite-activity / bounded-variation.  Everything here is
immutable after construction and safe to share across workers; kernel and
drift evaluation functions are required to be pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import quad

from .errors import QuadratureDivergence
from .expressions import compile_expression, mirror_xi_expression

# Divergence is declared when dyadic partial sums pass this, or when the
# shell contributions near 0 stop decaying.
_DIVERGENCE_CAP = 1e12
_MAX_SHELLS = 40
_RANGE_MASS_FLOOR = 1e-12


# ---------------------------------------------------------------------------
# scalar functions
# ---------------------------------------------------------------------------

def entropy_h(a: float) -> float:
    """h(a) = a*log(a) - a + 1 for a>0, 1 at a=0, +inf for a<0.

    The integrand of jump-process relative entropy; convex, nonnegative,
    vanishing only at a=1.
    """
    if a < 0.0:
        return math.inf
    if a == 0.0:
        return 1.0
    return a * math.log(a) - a + 1.0


def young_theta(a: float) -> float:
    """Young function theta(a) = (|a|+1)log(|a|+1) - |a| = h(|a|+1)."""
    return entropy_h(abs(a) + 1.0)


def truncate_jump(xi: np.ndarray, delta: "TruncationDelta | float") -> np.ndarray:
    """Small-jump truncation: 0 when delta=0, xi*1{|xi|<=delta} otherwise."""
    d = float(delta)
    xi = np.asarray(xi, dtype=float)
    if d == 0.0:
        return np.zeros_like(xi)
    if float(np.linalg.norm(xi)) <= d:
        return xi.copy()
    return np.zeros_like(xi)


# ---------------------------------------------------------------------------
# state spaces
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StateSpace:
    """Finite state set, lattice, or continuous box in R^n.

    Finite spaces carry an embedding of each state into R^d (default: states
    0..n-1 on the integer line) so jump sizes |xi| are defined for chains.
    """

    kind: str                      # "finite" | "lattice" | "continuous"
    dim: int
    bounds: np.ndarray             # (dim, 2) bounding box
    n_states: int = 0
    embedding: Optional[np.ndarray] = None   # (n_states, dim) for finite
    step: float = 0.0              # lattice spacing

    def __post_init__(self):
        if self.kind not in ("finite", "lattice", "continuous"):
            raise ValueError(f"unknown state space kind {self.kind!r}")
        if self.dim < 1:
            raise ValueError("dimension must be >= 1")
        bounds = np.asarray(self.bounds, dtype=float)
        if bounds.shape != (self.dim, 2):
            raise ValueError("bounds must have shape (dim, 2)")
        if self.kind != "finite" and not np.all(bounds[:, 1] > bounds[:, 0]):
            raise ValueError("bounding box must have positive volume")
        object.__setattr__(self, "bounds", bounds)
        if self.kind == "finite":
            if self.n_states < 1:
                raise ValueError("finite space needs n_states >= 1")
            emb = self.embedding
            if emb is None:
                emb = np.arange(self.n_states, dtype=float).reshape(-1, 1)
            emb = np.asarray(emb, dtype=float)
            if emb.shape != (self.n_states, self.dim):
                raise ValueError("embedding needs one point per state")
            object.__setattr__(self, "embedding", emb)
        elif self.kind == "lattice" and self.step <= 0:
            raise ValueError("lattice step must be positive")

    @classmethod
    def finite(cls, n_states: int, embedding=None) -> "StateSpace":
        emb = (np.arange(n_states, dtype=float).reshape(-1, 1)
               if embedding is None else np.asarray(embedding, dtype=float))
        dim = emb.shape[1]
        lo = emb.min(axis=0) - 0.5
        hi = emb.max(axis=0) + 0.5
        return cls(kind="finite", dim=dim, bounds=np.stack([lo, hi], axis=1),
                   n_states=n_states, embedding=emb)

    @classmethod
    def lattice(cls, dim: int, step: float, bounds) -> "StateSpace":
        return cls(kind="lattice", dim=dim, bounds=np.asarray(bounds, float), step=step)

    @classmethod
    def continuous(cls, dim: int, bounds) -> "StateSpace":
        return cls(kind="continuous", dim=dim, bounds=np.asarray(bounds, float))

    def index_of(self, x) -> int:
        """Nearest finite-state index of an embedded point."""
        if self.kind != "finite":
            raise ValueError("index_of only defined on finite spaces")
        x = np.asarray(x, dtype=float)
        d2 = np.sum((self.embedding - x) ** 2, axis=1)
        return int(np.argmin(d2))

    def state_point(self, i: int) -> np.ndarray:
        return self.embedding[i].copy()

    def contains(self, x, margin: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.bounds[:, 0] - margin)
                    and np.all(x <= self.bounds[:, 1] + margin))


# ---------------------------------------------------------------------------
# truncation and drift
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TruncationDelta:
    """Compensator cutoff delta >= 0; 0 means no compensator term.

    delta=0 is only admissible for kernels in the bounded-variation regime
    or with finite activity; ProcessSpec enforces this via the probes.
    """

    delta: float = 0.0

    def __post_init__(self):
        if self.delta < 0:
            raise ValueError("delta must be >= 0")

    def __float__(self) -> float:
        return float(self.delta)


@dataclass(frozen=True)
class DriftField:
    """Vector field b(t, x); evaluation must be pure and finite on probes."""

    fn: Callable[[float, np.ndarray], np.ndarray]
    dim: int
    is_zero: bool = False
    bound_hint: Optional[float] = None
    expressions: Optional[tuple] = None      # per-component source strings
    constant_value: Optional[np.ndarray] = None

    def __call__(self, t: float, x: np.ndarray) -> np.ndarray:
        if self.is_zero:
            return np.zeros(self.dim)
        if self.constant_value is not None:
            return self.constant_value.copy()
        out = np.asarray(self.fn(t, np.asarray(x, dtype=float)), dtype=float)
        return out.reshape(self.dim)

    @classmethod
    def zero(cls, dim: int) -> "DriftField":
        return cls(fn=lambda t, x: np.zeros(dim), dim=dim, is_zero=True,
                   bound_hint=0.0, expressions=tuple(["0"] * dim),
                   constant_value=np.zeros(dim))

    @classmethod
    def constant(cls, vec) -> "DriftField":
        v = np.asarray(vec, dtype=float).ravel()
        return cls(fn=lambda t, x: v.copy(), dim=v.size,
                   bound_hint=float(np.linalg.norm(v)),
                   expressions=tuple(repr(float(c)) for c in v),
                   is_zero=bool(np.all(v == 0.0)),
                   constant_value=v.copy())

    @classmethod
    def from_expressions(cls, exprs: Sequence[str], dim: Optional[int] = None) -> "DriftField":
        exprs = tuple(exprs)
        d = dim if dim is not None else len(exprs)
        fns = [compile_expression(e, n_x=d) for e in exprs]

        def fn(t, x):
            return np.array([f(t, x=x) for f in fns])

        return cls(fn=fn, dim=d, expressions=exprs)


# ---------------------------------------------------------------------------
# quadrature helpers (1-d densities)
# ---------------------------------------------------------------------------

def _interval_pieces(support, eps):
    """Split 1-d support intervals at 0, +-eps and +-1; drop |xi| <= eps."""
    pieces = []
    for lo, hi in support:
        lo, hi = float(lo), float(hi)
        points = sorted({lo, hi} | {c for c in (-1.0, 1.0, -eps, eps, 0.0) if lo < c < hi})
        for a, b in zip(points[:-1], points[1:]):
            mid = 0.5 * (a + b)
            if abs(mid) <= eps or a == b:
                continue
            pieces.append((a, b))
    return pieces


def _shells_then_quad(g, support, eps=0.0):
    """Integrate g over the support with dyadic refinement toward xi=0.

    Returns (value, diverged).  Divergence is declared when partial sums pass
    the cap or the shell contributions fail to decay as the shells shrink.
    """
    total = 0.0
    shell_vals = []
    for a, b in _interval_pieces(support, eps):
        if min(abs(a), abs(b)) >= 1.0 or abs(b - a) == 0.0:
            total += quad(g, a, b, limit=200)[0]
            continue
        # piece touches the small-jump region: carve dyadic shells toward 0
        sign = 1.0 if (a + b) > 0 else -1.0
        inner = max(min(abs(a), abs(b)), 0.0)
        outer = max(abs(a), abs(b))
        if inner > 0.0:
            total += quad(g, a, b, limit=200)[0]
            continue
        # inner == 0: shells (2^-m, 2^-m+1] * sign
        hi = outer
        for m in range(1, _MAX_SHELLS + 1):
            lo = outer * 2.0 ** (-m)
            lo_s, hi_s = (lo, hi) if sign > 0 else (-hi, -lo)
            val = quad(g, lo_s, hi_s, limit=100)[0]
            shell_vals.append(val)
            total += val
            hi = lo
            if abs(total) > _DIVERGENCE_CAP:
                return total, True
    if len(shell_vals) >= 6:
        tail = shell_vals[-4:]
        if abs(tail[-1]) > 1e-300:
            ratios = [abs(tail[i + 1]) / abs(tail[i]) for i in range(3) if abs(tail[i]) > 0]
            if ratios and min(ratios) >= 0.999:
                return total, True
            if ratios:
                r = sum(ratios) / len(ratios)
                tail_estimate = abs(tail[-1]) * r / (1.0 - r) if r < 1.0 else math.inf
                if tail_estimate > _DIVERGENCE_CAP:
                    return total, True
                if all(v > 0 for v in tail) or all(v < 0 for v in tail):
                    # geometric extrapolation of the unresolved mass below 2^-40
                    total += math.copysign(tail_estimate, tail[-1])
    return total, False


# ---------------------------------------------------------------------------
# jump kernels
# ---------------------------------------------------------------------------

class JumpKernel:
    """Base interface: intensity measure K_{t,x}(dxi) over displacements.

    Concrete kernels implement atoms and/or a 1-d density part.  All rates
    and densities are nonnegative and put no mass at xi = 0.
    """

    dim: int = 1

    # -- structure ---------------------------------------------------------
    def atoms(self, t: float, x: np.ndarray):
        """Return (displacements (m, dim), rates (m,)) or None."""
        return None

    def density_part(self, t: float, x: np.ndarray):
        """Return (g(xi)->rate density, support intervals) or None. 1-d only."""
        return None

    def is_finite_activity(self, t: float, x: np.ndarray) -> bool:
        dens = self.density_part(t, x)
        if dens is None:
            return True
        val, div = _shells_then_quad(dens[0], dens[1])
        return not div and val < _DIVERGENCE_CAP

    def time_homogeneous(self) -> bool:
        """True when rates provably do not depend on t (bound probes may
        then use a single time point)."""
        return False

    # -- integral operations -----------------------------------------------
    def integrate(self, t, x, f, eps: float = 0.0, raise_on_divergence: bool = True):
        """integral of f(xi) K_{t,x}(dxi) over |xi| > eps; exact over atoms."""
        total = 0.0
        at = self.atoms(t, x)
        if at is not None:
            xis, rates = at
            for xi, r in zip(xis, rates):
                if r > 0.0 and np.linalg.norm(xi) > eps:
                    total += r * f(xi)
        dens = self.density_part(t, x)
        if dens is not None:
            g, support = dens
            val, div = _shells_then_quad(lambda s: g(s) * f(np.array([s])), support, eps)
            if div:
                if raise_on_divergence:
                    raise QuadratureDivergence(
                        "kernel integral diverges on the dyadic probe quadrature")
                return math.inf
            total += val
        return total

    def total_rate(self, t, x, eps: float = 0.0) -> float:
        return self.integrate(t, x, lambda xi: 1.0, eps=eps, raise_on_divergence=False)

    def mean_truncated(self, t, x, lo: float, hi: float) -> np.ndarray:
        """integral of xi over lo < |xi| <= hi (compensator corrections)."""
        if hi <= lo:
            return np.zeros(self.dim)
        out = np.zeros(self.dim)
        at = self.atoms(t, x)
        if at is not None:
            xis, rates = at
            for xi, r in zip(xis, rates):
                n = np.linalg.norm(xi)
                if r > 0.0 and lo < n <= hi:
                    out += r * np.asarray(xi, float)
        dens = self.density_part(t, x)
        if dens is not None:
            g, support = dens
            clipped = [(max(a, -hi), min(b, hi)) for a, b in support
                       if max(a, -hi) < min(b, hi)]
            val, div = _shells_then_quad(lambda s: g(s) * s, clipped, eps=lo)
            if div:
                raise QuadratureDivergence(
                    "truncated first moment diverges (unbounded-variation kernel)")
            out += np.array([val])
        return out

    def sample_jump(self, t, x, rng, eps: float = 0.0) -> np.ndarray:
        at = self.atoms(t, x)
        cands, weights = [], []
        if at is not None:
            xis, rates = at
            for xi, r in zip(xis, rates):
                if r > 0.0 and np.linalg.norm(xi) > eps:
                    cands.append(("atom", np.asarray(xi, float)))
                    weights.append(float(r))
        dens = self.density_part(t, x)
        if dens is not None:
            g, support = dens
            mass, div = _shells_then_quad(g, support, eps)
            if div or not math.isfinite(mass):
                raise QuadratureDivergence(
                    "cannot sample an infinite-activity density; use epsilon > 0")
            if mass > 0:
                cands.append(("density", dens))
                weights.append(mass)
        wsum = float(sum(weights))
        if wsum <= 0.0:
            raise ValueError("no jump mass to sample from")
        u = rng.random() * wsum
        acc = 0.0
        for (kind, payload), w in zip(cands, weights):
            acc += w
            if u <= acc:
                if kind == "atom":
                    return payload.copy()
                return self._sample_density(payload, w, rng, eps)
        return cands[-1][1].copy() if cands[-1][0] == "atom" else \
            self._sample_density(cands[-1][1], weights[-1], rng, eps)

    def _sample_density(self, dens, mass, rng, eps):
        # inverse-CDF on a fine grid; adequate for the 1-d desk-scale demos
        g, support = dens
        xs = []
        for a, b in _interval_pieces(support, eps):
            xs.append(np.linspace(a, b, 512))
        grid = np.unique(np.concatenate(xs))
        vals = np.array([max(g(s), 0.0) for s in grid])
        cdf = np.concatenate([[0.0], np.cumsum(0.5 * (vals[1:] + vals[:-1]) * np.diff(grid))])
        if cdf[-1] <= 0:
            raise ValueError("density part has zero mass above epsilon")
        u = rng.random() * cdf[-1]
        j = int(np.searchsorted(cdf, u, side="right")) - 1
        j = min(max(j, 0), len(grid) - 2)
        seg = cdf[j + 1] - cdf[j]
        frac = 0.0 if seg <= 0 else (u - cdf[j]) / seg
        return np.array([grid[j] + frac * (grid[j + 1] - grid[j])])

    # -- probes --------------------------------------------------------------
    def probe(self, t, x) -> "ProbeEntry":
        def capped(f):
            return self.integrate(t, x, f, raise_on_divergence=False)

        quad_probe = capped(lambda xi: min(float(np.dot(xi, xi)), 1.0))
        bv_probe = capped(lambda xi: np.linalg.norm(xi)
                          if np.linalg.norm(xi) <= 1.0 else 0.0)
        large_mass = capped(lambda xi: 1.0 if np.linalg.norm(xi) >= 1.0 else 0.0)
        return ProbeEntry(
            t=t, x=np.asarray(x, float),
            quadratic=quad_probe, quadratic_diverged=not math.isfinite(quad_probe),
            bounded_variation=bv_probe,
            bv_diverged=not math.isfinite(bv_probe),
            large_jump_mass=large_mass,
            jump_range=self.jump_range(t, x),
            finite_activity=self.is_finite_activity(t, x),
        )

    def jump_range(self, t, x) -> float:
        """Smallest radius outside which probed mass is below the floor."""
        rng_max = 0.0
        at = self.atoms(t, x)
        if at is not None:
            xis, rates = at
            norms = [float(np.linalg.norm(xi)) for xi, r in zip(xis, rates) if r > 0]
            if norms:
                rng_max = max(norms)
        dens = self.density_part(t, x)
        if dens is not None:
            g, support = dens

            def mass_outside(radius):
                clipped = []
                for a, b in support:
                    if b > radius:
                        clipped.append((max(a, radius), b))
                    if a < -radius:
                        clipped.append((a, min(b, -radius)))
                return sum(quad(g, a, b, limit=100)[0] for a, b in clipped if a < b)

            outer = max(max(abs(a), abs(b)) for a, b in support)
            radius = 2.0 ** math.ceil(math.log2(outer)) if outer > 0 else 0.0
            while radius > 1e-9 and mass_outside(radius / 2.0) < _RANGE_MASS_FLOOR:
                radius /= 2.0
            rng_max = max(rng_max, radius)
        return rng_max


@dataclass(frozen=True)
class FiniteRateMatrix(JumpKernel):
    """n x n nonnegative rate matrix with zero diagonal, optionally t-dependent.

    Displacement semantics come from the state embedding, so |xi| is defined.
    """

    rates: object                      # (n, n) array or callable t -> array
    embedding: np.ndarray = None       # (n, dim)

    def __post_init__(self):
        if not callable(self.rates):
            mat = np.asarray(self.rates, dtype=float)
            if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
                raise ValueError("rate matrix must be square")
            if np.any(mat < 0):
                raise ValueError("rates must be nonnegative")
            if np.any(np.diag(mat) != 0):
                raise ValueError("rate matrix must have zero diagonal")
            object.__setattr__(self, "rates", mat)
            n = mat.shape[0]
        else:
            n = np.asarray(self.rates(0.0)).shape[0]
        emb = self.embedding
        if emb is None:
            emb = np.arange(n, dtype=float).reshape(-1, 1)
        emb = np.asarray(emb, dtype=float)
        object.__setattr__(self, "embedding", emb)
        object.__setattr__(self, "dim", emb.shape[1])
        integer_line = (emb.shape[1] == 1
                        and np.array_equal(emb[:, 0], np.arange(emb.shape[0])))
        object.__setattr__(self, "_integer_line", integer_line)
        if not callable(self.rates):
            object.__setattr__(self, "_row_sums", self.rates.sum(axis=1))
            object.__setattr__(self, "_row_cumsum", np.cumsum(self.rates, axis=1))
        else:
            object.__setattr__(self, "_row_sums", None)
            object.__setattr__(self, "_row_cumsum", None)

    @property
    def n_states(self) -> int:
        return self.embedding.shape[0]

    def rate_matrix(self, t: float) -> np.ndarray:
        if callable(self.rates):
            mat = np.asarray(self.rates(t), dtype=float)
            if np.any(mat < 0) or np.any(np.diag(mat) != 0):
                raise ValueError("time-dependent rates must stay nonnegative, zero diagonal")
            return mat
        return self.rates

    def time_dependent(self) -> bool:
        return callable(self.rates)

    def time_homogeneous(self) -> bool:
        return not callable(self.rates)

    def _index(self, x) -> int:
        if self._integer_line:
            n = self.embedding.shape[0]
            return min(max(int(x[0] + 0.5), 0), n - 1)
        d2 = np.sum((self.embedding - np.asarray(x, float)) ** 2, axis=1)
        return int(np.argmin(d2))

    def atoms(self, t, x):
        i = self._index(x)
        row = self.rate_matrix(t)[i]
        nz = np.nonzero(row)[0]
        xis = self.embedding[nz] - self.embedding[i]
        return xis, row[nz]

    def total_rate(self, t, x, eps: float = 0.0) -> float:
        i = self._index(x)
        if eps == 0.0:
            if self._row_sums is not None:
                return float(self._row_sums[i])
            return float(self.rate_matrix(t)[i].sum())
        row = self.rate_matrix(t)[i]
        norms = np.linalg.norm(self.embedding - self.embedding[i], axis=1)
        return float(row[norms > eps].sum())

    def sample_jump(self, t, x, rng, eps: float = 0.0):
        if eps > 0.0 or self._row_cumsum is None:
            return super().sample_jump(t, x, rng, eps)
        i = self._index(x)
        cum = self._row_cumsum[i]
        total = cum[-1]
        if total <= 0.0:
            raise ValueError("no jump mass to sample from")
        j = int(np.searchsorted(cum, rng.random() * total, side="right"))
        j = min(j, cum.size - 1)
        return self.embedding[j] - self.embedding[i]


@dataclass(frozen=True)
class AtomicKernel(JumpKernel):
    """Finitely many jump vectors with state/time-dependent rates.

    Each atom is (xi, rate) where rate is a float, an expression string in
    (t, x), or a callable (t, x) -> float.
    """

    atom_list: tuple                   # ((xi, rate_spec), ...)
    dim: int = 1

    def __post_init__(self):
        compiled = []
        homogeneous = True
        for xi, rate in self.atom_list:
            xi = np.asarray(xi, dtype=float).ravel()
            if np.linalg.norm(xi) == 0.0:
                raise ValueError("atoms must not sit at xi = 0")
            if isinstance(rate, str):
                fn = compile_expression(rate, n_x=max(self.dim, xi.size))
                homogeneous = homogeneous and "t" not in fn.variables
                compiled.append((xi, (lambda f: lambda t, x: f(t, x=x))(fn), rate))
            elif callable(rate):
                homogeneous = False
                compiled.append((xi, rate, None))
            else:
                r = float(rate)
                if r < 0:
                    raise ValueError("atom rates must be nonnegative")
                compiled.append((xi, (lambda rr: lambda t, x: rr)(r), repr(r)))
        object.__setattr__(self, "atom_list", tuple(compiled))
        object.__setattr__(self, "dim", compiled[0][0].size if compiled else self.dim)
        object.__setattr__(self, "_homogeneous", homogeneous)
        const_rates = []
        for _, _, src in compiled:
            try:
                const_rates.append(float(src))
            except (TypeError, ValueError):
                const_rates = None
                break
        if const_rates is not None:
            object.__setattr__(self, "_const_xis",
                               np.array([a[0] for a in compiled]))
            object.__setattr__(self, "_const_rates", np.array(const_rates))
            object.__setattr__(self, "_const_total", float(sum(const_rates)))
        else:
            object.__setattr__(self, "_const_xis", None)
            object.__setattr__(self, "_const_rates", None)
            object.__setattr__(self, "_const_total", None)

    def atoms(self, t, x):
        if self._const_rates is not None:
            return self._const_xis, self._const_rates
        xis = np.array([a[0] for a in self.atom_list])
        rates = np.array([float(a[1](t, x)) for a in self.atom_list])
        if np.any(rates < 0):
            raise ValueError("atom rate evaluated negative")
        return xis, rates

    def total_rate(self, t, x, eps: float = 0.0):
        if self._const_total is not None and eps == 0.0:
            return self._const_total
        return super().total_rate(t, x, eps)

    def time_homogeneous(self) -> bool:
        return self._homogeneous


@dataclass(frozen=True)
class LevyKernel(JumpKernel):
    """State-independent measure Lambda = atoms + optional 1-d density,
    together with the constant drift vector of the triplet."""

    levy_atoms: tuple = ()             # ((xi, weight), ...)
    density: Optional[object] = None   # expression str or callable xi -> value
    support: tuple = ()                # ((lo, hi), ...) for the density part
    drift: np.ndarray = None
    dim: int = 1

    def __post_init__(self):
        atoms = []
        for xi, w in self.levy_atoms:
            xi = np.asarray(xi, dtype=float).ravel()
            if np.linalg.norm(xi) == 0.0:
                raise ValueError("Levy atoms must not sit at xi = 0")
            if w < 0:
                raise ValueError("Levy atom weights must be nonnegative")
            atoms.append((xi, float(w)))
        object.__setattr__(self, "levy_atoms", tuple(atoms))
        d = atoms[0][0].size if atoms else self.dim
        object.__setattr__(self, "dim", d)
        drift = np.zeros(d) if self.drift is None else np.asarray(self.drift, float).ravel()
        object.__setattr__(self, "drift", drift)
        if self.density is not None:
            if d != 1:
                raise ValueError("density part of a Levy kernel is 1-d only")
            if isinstance(self.density, str):
                fn = compile_expression(self.density, n_x=0, n_xi=1)
                object.__setattr__(self, "_density_fn",
                                    lambda s, _f=fn: max(_f(0.0, xi=[s]), 0.0))
                object.__setattr__(self, "_density_src", self.density)
            else:
                object.__setattr__(self, "_density_fn", self.density)
                object.__setattr__(self, "_density_src", None)
            if not self.support:
                raise ValueError("density part needs explicit support intervals")
        else:
            object.__setattr__(self, "_density_fn", None)
            object.__setattr__(self, "_density_src", None)

    def time_homogeneous(self) -> bool:
        return True

    def total_rate(self, t, x, eps: float = 0.0) -> float:
        # state-independent measure: cache the total mass per cutoff
        cache = getattr(self, "_mass_cache", None)
        if cache is None:
            cache = {}
            object.__setattr__(self, "_mass_cache", cache)
        if eps not in cache:
            cache[eps] = super().total_rate(t, x, eps)
        return cache[eps]

    def sample_jump(self, t, x, rng, eps: float = 0.0):
        if self._density_fn is None:
            return super().sample_jump(t, x, rng, eps)
        atoms_mass = sum(w for xi, w in self.levy_atoms if np.linalg.norm(xi) > eps)
        dens_cache = getattr(self, "_cdf_cache", None)
        if dens_cache is None:
            dens_cache = {}
            object.__setattr__(self, "_cdf_cache", dens_cache)
        if eps not in dens_cache:
            g, support = self.density_part(t, x)
            xs = [np.linspace(a, b, 512) for a, b in _interval_pieces(support, eps)]
            grid = np.unique(np.concatenate(xs)) if xs else np.array([])
            vals = np.array([max(g(s), 0.0) for s in grid])
            cdf = np.concatenate([[0.0], np.cumsum(
                0.5 * (vals[1:] + vals[:-1]) * np.diff(grid))]) if grid.size else np.zeros(1)
            dens_cache[eps] = (grid, cdf)
        grid, cdf = dens_cache[eps]
        dens_mass = float(cdf[-1])
        total = atoms_mass + dens_mass
        if total <= 0.0:
            raise ValueError("no jump mass to sample from")
        u = rng.random() * total
        if u < atoms_mass:
            acc = 0.0
            for xi, w in self.levy_atoms:
                if np.linalg.norm(xi) > eps:
                    acc += w
                    if u <= acc:
                        return xi.copy()
            return self.levy_atoms[-1][0].copy()
        u2 = rng.random() * dens_mass
        j = min(max(int(np.searchsorted(cdf, u2, side="right")) - 1, 0), grid.size - 2)
        seg = cdf[j + 1] - cdf[j]
        frac = 0.0 if seg <= 0 else (u2 - cdf[j]) / seg
        return np.array([grid[j] + frac * (grid[j + 1] - grid[j])])

    def atoms(self, t, x):
        if not self.levy_atoms:
            return None
        xis = np.array([a[0] for a in self.levy_atoms])
        ws = np.array([a[1] for a in self.levy_atoms])
        return xis, ws

    def density_part(self, t, x):
        if self._density_fn is None:
            return None
        return self._density_fn, tuple((float(a), float(b)) for a, b in self.support)

    def mirror(self) -> "LevyKernel":
        """Pushforward of Lambda by xi -> -xi (atoms negated, density flipped)."""
        atoms = tuple(((-a[0]).copy(), a[1]) for a in self.levy_atoms)
        density = None
        if self._density_fn is not None:
            if self._density_src is not None:
                density = mirror_xi_expression(self._density_src)
            else:
                base = self._density_fn
                density = lambda s, _b=base: _b(-s)  # noqa: E731
        support = tuple(sorted((-b, -a) for a, b in self.support))
        return LevyKernel(levy_atoms=atoms, density=density, support=support,
                          drift=-self.drift, dim=self.dim)


@dataclass(frozen=True)
class DensityKernel(JumpKernel):
    """Intensity density k(t, x, xi) w.r.t. Lebesgue in xi (1-d support)."""

    density: object                    # expression str or callable (t, x, xi) -> value
    support: tuple                     # ((lo, hi), ...)
    dim: int = 1

    def __post_init__(self):
        if self.dim != 1:
            raise ValueError("DensityKernel supports 1-d jumps only")
        if isinstance(self.density, str):
            fn = compile_expression(self.density, n_x=1, n_xi=1)
            object.__setattr__(self, "_fn",
                               lambda t, x, s, _f=fn: max(_f(t, x=x, xi=[s]), 0.0))
            object.__setattr__(self, "_src", self.density)
        else:
            object.__setattr__(self, "_fn", self.density)
            object.__setattr__(self, "_src", None)
        if not self.support:
            raise ValueError("density kernel needs explicit support intervals")

    def density_part(self, t, x):
        x = np.asarray(x, dtype=float)
        return (lambda s: self._fn(t, x, s),
                tuple((float(a), float(b)) for a, b in self.support))

    def time_homogeneous(self) -> bool:
        if self._src is None:
            return False
        return "t" not in compile_expression(self._src, n_x=1, n_xi=1).variables


@dataclass(frozen=True)
class TiltedKernel(JumpKernel):
    """j(t, x, y) * base kernel: the Girsanov modification of the jump part."""

    base: JumpKernel
    tilt: Callable[[float, np.ndarray, np.ndarray], float]
    tilt_expression: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "dim", self.base.dim)

    def _j(self, t, x, y) -> float:
        v = float(self.tilt(t, np.asarray(x, float), np.asarray(y, float)))
        if v < 0:
            raise ValueError("tilt evaluated negative")
        return v

    def atoms(self, t, x):
        at = self.base.atoms(t, x)
        if at is None:
            return None
        xis, rates = at
        x = np.asarray(x, dtype=float)
        scaled = np.array([r * self._j(t, x, x + xi) for xi, r in zip(xis, rates)])
        return xis, scaled

    def density_part(self, t, x):
        dens = self.base.density_part(t, x)
        if dens is None:
            return None
        g, support = dens
        x = np.asarray(x, dtype=float)
        return (lambda s: g(s) * self._j(t, x, x + np.array([s]))), support

    def time_homogeneous(self) -> bool:
        if not self.base.time_homogeneous():
            return False
        if self.tilt_expression is None:
            return False
        return "t" not in compile_expression(
            self.tilt_expression, n_x=self.dim, n_y=self.dim).variables


# ---------------------------------------------------------------------------
# initial law and process spec
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InitialLaw:
    """Point mass, probability vector over finite states, or sampler+density."""

    kind: str                          # "point" | "vector" | "sampler"
    state: Optional[np.ndarray] = None
    probabilities: Optional[np.ndarray] = None
    sampler: Optional[Callable] = None
    density: Optional[Callable] = None

    def __post_init__(self):
        if self.kind == "point":
            if self.state is None:
                raise ValueError("point law needs a state")
            object.__setattr__(self, "state", np.asarray(self.state, float).ravel())
        elif self.kind == "vector":
            if self.probabilities is None:
                raise ValueError("vector law needs probabilities")
            p = np.asarray(self.probabilities, dtype=float)
            if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
                raise ValueError("probability vector must be nonnegative and sum to 1")
            object.__setattr__(self, "probabilities", p)
        elif self.kind == "sampler":
            if self.sampler is None:
                raise ValueError("sampler law needs a sampler")
        else:
            raise ValueError(f"unknown initial law kind {self.kind!r}")

    @classmethod
    def point(cls, state) -> "InitialLaw":
        return cls(kind="point", state=np.asarray(state, float))

    @classmethod
    def vector(cls, probabilities) -> "InitialLaw":
        return cls(kind="vector", probabilities=np.asarray(probabilities, float))

    def sample(self, rng, space: StateSpace) -> np.ndarray:
        if self.kind == "point":
            return self.state.copy()
        if self.kind == "vector":
            i = int(rng.choice(len(self.probabilities), p=self.probabilities))
            return space.state_point(i)
        return np.asarray(self.sampler(rng), dtype=float).ravel()

    def support_points(self, space: StateSpace):
        if self.kind == "point":
            return [self.state.copy()]
        if self.kind == "vector":
            return [space.state_point(i)
                    for i in np.nonzero(self.probabilities > 0)[0]]
        probe_rng = np.random.Generator(np.random.Philox(key=[0, 0]))
        return [self.sample(probe_rng, space) for _ in range(4)]


@dataclass(frozen=True)
class ProcessSpec:
    """Full martingale-problem data: (initial law, drift b^delta, kernel K,
    truncation delta) on a state space, over the horizon [0, T]."""

    space: StateSpace
    drift: DriftField
    kernel: JumpKernel
    delta: TruncationDelta
    initial_law: InitialLaw
    horizon: float

    def __post_init__(self):
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if isinstance(self.delta, (int, float)):
            object.__setattr__(self, "delta", TruncationDelta(float(self.delta)))
        if self.drift.dim != self.space.dim:
            raise ValueError("drift dimension does not match state space")
        for p in self.initial_law.support_points(self.space):
            if not self.space.contains(p, margin=1e-9):
                raise ValueError("initial law not supported inside the state space")

    def probe_points(self, n_extra: int = 3):
        """(t, x) pairs covering the initial support and a few grid times."""
        times = np.linspace(0.0, self.horizon, n_extra + 1)
        pts = self.initial_law.support_points(self.space)
        return [(float(t), x) for t in times for x in pts[:8]]


# ---------------------------------------------------------------------------
# hypothesis probes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProbeEntry:
    t: float
    x: np.ndarray
    quadratic: float                  # integral of (|xi|^2 ^ 1) K
    quadratic_diverged: bool
    bounded_variation: float          # integral of 1{|xi|<=1} |xi| K
    bv_diverged: bool
    large_jump_mass: float            # K({|xi| >= 1})
    jump_range: float                 # Delta_K at x
    finite_activity: bool


@dataclass(frozen=True)
class HypothesisReport:
    entries: tuple
    delta_zero_admissible: bool
    quadratic_ok: bool

    @property
    def max_jump_range(self) -> float:
        return max((e.jump_range for e in self.entries), default=0.0)


def probe_hypotheses(spec_or_kernel, probe_grid) -> HypothesisReport:
    """Evaluate the integrability probes on a grid of (t, x) points.

    delta=0 is admissible when every probe point is either finite-activity
    or passes the bounded-variation probe.  Quadrature failures are flagged
    per entry, never fatal.
    """
    kernel = spec_or_kernel.kernel if isinstance(spec_or_kernel, ProcessSpec) else spec_or_kernel
    if not probe_grid:
        raise ValueError("probe grid must be nonempty")
    entries = []
    for t, x in probe_grid:
        entries.append(kernel.probe(float(t), np.asarray(x, dtype=float)))
    admissible = all((not e.bv_diverged) or e.finite_activity for e in entries)
    quad_ok = all(not e.quadratic_diverged for e in entries)
    return HypothesisReport(entries=tuple(entries),
                            delta_zero_admissible=admissible,
                            quadratic_ok=quad_ok)


def effective_rate_matrix(spec: ProcessSpec, t: float) -> np.ndarray:
    """Rate matrix of the chain induced on a finite space by the kernel.

    Atoms whose landing point falls outside the state set are dropped
    (truncation semantics of finite chains).
    """
    space = spec.space
    if space.kind != "finite":
        raise ValueError("effective_rate_matrix needs a finite state space")
    kernel = spec.kernel
    if isinstance(kernel, FiniteRateMatrix):
        return kernel.rate_matrix(t)
    if isinstance(kernel, TiltedKernel) and isinstance(kernel.base, FiniteRateMatrix):
        base = kernel.base.rate_matrix(t)
        n = space.n_states
        out = np.zeros_like(base)
        for i in range(n):
            xi_ = space.state_point(i)
            for j in range(n):
                if base[i, j] > 0:
                    out[i, j] = base[i, j] * kernel._j(t, xi_, space.state_point(j))
        return out
    n = space.n_states
    out = np.zeros((n, n))
    for i in range(n):
        x = space.state_point(i)
        at = kernel.atoms(t, x)
        if at is None:
            raise ValueError("kernel has no atomic representation on a finite space")
        xis, rates = at
        for xi, r in zip(xis, rates):
            if r <= 0:
                continue
            target = x + xi
            j = space.index_of(target)
            if np.linalg.norm(space.state_point(j) - target) < 1e-9 and j != i:
                out[i, j] += r
    return out
