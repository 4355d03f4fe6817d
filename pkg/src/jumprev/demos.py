"""Named demo presets wired through the CLI.

poisson     counting process truncated at state 50 (backward rate k/t)
cycle3      directed 3-state cycle (reversal flips the cycle)
chain5      a fixed random 5-state chain (oracle-equivalence workhorse)
reversible  exp(-V)-symmetric chain at stationarity (detailed balance)
lattice     delta=1 chain on 0..6 with jumps of size 1 and 2
levy        state-independent jump triplet with a density part
tilt        Poisson reference tilted by j = 2
acviolation constructed absolute-continuity failure (exits 3)
"""

from __future__ import annotations

import numpy as np

from .core import (DriftField, FiniteRateMatrix, InitialLaw, LevyKernel,
                   ProcessSpec, StateSpace, TruncationDelta)


def poisson_spec(lam: float = 2.0, n_states: int = 51, horizon: float = 1.0) -> ProcessSpec:
    rates = np.zeros((n_states, n_states))
    for k in range(n_states - 1):
        rates[k, k + 1] = lam
    return ProcessSpec(space=StateSpace.finite(n_states), drift=DriftField.zero(1),
                       kernel=FiniteRateMatrix(rates=rates), delta=TruncationDelta(0.0),
                       initial_law=InitialLaw.point([0.0]), horizon=horizon)


def cycle3_spec(rate: float = 1.0, horizon: float = 1.0) -> ProcessSpec:
    rates = np.array([[0.0, rate, 0.0], [0.0, 0.0, rate], [rate, 0.0, 0.0]])
    return ProcessSpec(space=StateSpace.finite(3), drift=DriftField.zero(1),
                       kernel=FiniteRateMatrix(rates=rates), delta=TruncationDelta(0.0),
                       initial_law=InitialLaw.vector([1 / 3, 1 / 3, 1 / 3]),
                       horizon=horizon)


def chain5_spec(horizon: float = 1.0) -> ProcessSpec:
    gen = np.random.Generator(np.random.Philox(key=[20240601, 5]))
    rates = gen.uniform(0.2, 1.5, size=(5, 5))
    np.fill_diagonal(rates, 0.0)
    p0 = gen.uniform(0.5, 1.5, size=5)
    p0 = p0 / p0.sum()
    return ProcessSpec(space=StateSpace.finite(5), drift=DriftField.zero(1),
                       kernel=FiniteRateMatrix(rates=rates), delta=TruncationDelta(0.0),
                       initial_law=InitialLaw.vector(p0), horizon=horizon)


def reversible_spec(n_states: int = 7, horizon: float = 1.0) -> ProcessSpec:
    """exp(-V)-weighted symmetric kernel started in its stationary law:
    rates(x -> y) = s(x, y) exp(-[V(y) - V(x)] / 2) with s symmetric."""
    idx = np.arange(n_states, dtype=float)
    v = 0.5 * (idx - (n_states - 1) / 2.0) ** 2
    rates = np.zeros((n_states, n_states))
    for i in range(n_states):
        for j in range(n_states):
            if i != j and abs(i - j) <= 2:
                rates[i, j] = np.exp(-(v[j] - v[i]) / 2.0)
    law = np.exp(-v)
    law = law / law.sum()
    return ProcessSpec(space=StateSpace.finite(n_states), drift=DriftField.zero(1),
                       kernel=FiniteRateMatrix(rates=rates), delta=TruncationDelta(0.0),
                       initial_law=InitialLaw.vector(law), horizon=horizon)


# lattice chain with jumps of size 1 and 2; rates chosen exactly representable
_LATTICE_RATES = {1: 1.25, -1: 0.75, 2: 0.5, -2: 0.25}


def lattice_delta1_spec(n_states: int = 7, horizon: float = 1.0) -> ProcessSpec:
    """delta = 1 example: only the unit jumps are compensated, so the
    spec drift equals the truncated first moment of the kernel and the
    effective flow between jumps vanishes identically."""
    rates = np.zeros((n_states, n_states))
    for i in range(n_states):
        for step, r in _LATTICE_RATES.items():
            j = i + step
            if 0 <= j < n_states:
                rates[i, j] = r
    top = n_states - 1
    drift = DriftField.from_expressions(
        [f"{_LATTICE_RATES[1]}*min(1, max(0, {top} - x0)) "
         f"- {_LATTICE_RATES[-1]}*min(1, max(0, x0))"])
    p0 = np.ones(n_states) / n_states
    return ProcessSpec(space=StateSpace.finite(n_states), drift=drift,
                       kernel=FiniteRateMatrix(rates=rates), delta=TruncationDelta(1.0),
                       initial_law=InitialLaw.vector(p0), horizon=horizon)


def levy_spec(horizon: float = 1.0) -> ProcessSpec:
    kernel = LevyKernel(levy_atoms=(((1.0,), 0.5), ((-0.5,), 0.25)),
                        density="0.5*exp(-abs(xi0))", support=((0.1, 3.0),),
                        drift=(0.25,))
    return ProcessSpec(space=StateSpace.continuous(1, [[-40.0, 40.0]]),
                       drift=DriftField.constant([0.25]), kernel=kernel,
                       delta=TruncationDelta(0.0),
                       initial_law=InitialLaw.point([0.0]), horizon=horizon)


def acviolation_spec(horizon: float = 1.0) -> ProcessSpec:
    """Point mass on state 0 with the kernel pushing into state 1: at t=0
    the flux equation has no solution (flux into a zero-mass state)."""
    rates = np.array([[0.0, 1.0], [0.0, 0.0]])
    return ProcessSpec(space=StateSpace.finite(2), drift=DriftField.zero(1),
                       kernel=FiniteRateMatrix(rates=rates), delta=TruncationDelta(0.0),
                       initial_law=InitialLaw.point([0.0]), horizon=horizon)


def _grid(t_min, t_max, n):
    return np.linspace(t_min, t_max, n).tolist()


DEMOS = {
    "poisson": dict(
        build=poisson_spec,
        components=("simulate", "marginals", "reverse", "verify", "entropy"),
        defaults={
            "simulate": {"n_paths": 20000, "epsilon": 0.0},
            "marginals": {"grid": _grid(0.1, 1.0, 46)},
            "verify": {"time_edges": _grid(0.0, 1.0, 6)},
            "entropy": {"tilt": "2.0", "refinements": [26, 51, 101]},
        }),
    "cycle3": dict(
        build=cycle3_spec,
        components=("simulate", "marginals", "reverse", "verify"),
        defaults={
            "simulate": {"n_paths": 20000, "epsilon": 0.0},
            "marginals": {"grid": _grid(0.0, 1.0, 50)},
            "verify": {"time_edges": _grid(0.0, 1.0, 6)},
        }),
    "chain5": dict(
        build=chain5_spec,
        components=("simulate", "marginals", "reverse", "verify"),
        defaults={
            "simulate": {"n_paths": 20000, "epsilon": 0.0},
            "marginals": {"grid": _grid(0.0, 1.0, 50)},
            "verify": {"time_edges": _grid(0.0, 1.0, 6)},
        }),
    "reversible": dict(
        build=reversible_spec,
        components=("simulate", "marginals", "reverse", "verify"),
        defaults={
            "simulate": {"n_paths": 20000, "epsilon": 0.0},
            "marginals": {"grid": _grid(0.0, 1.0, 50)},
            "verify": {"time_edges": _grid(0.0, 1.0, 6)},
        }),
    "lattice": dict(
        build=lattice_delta1_spec,
        components=("simulate", "marginals", "reverse"),
        defaults={
            # the effective flow vanishes identically, so a coarse RK4 step
            # is exact and keeps the compensated-drift path cheap
            "simulate": {"n_paths": 2000, "epsilon": 0.0, "rk4_step": 0.05},
            "marginals": {"grid": _grid(0.0, 1.0, 26)},
        }),
    "levy": dict(
        build=levy_spec,
        components=("simulate",),
        defaults={"simulate": {"n_paths": 5000, "epsilon": 0.0}}),
    "tilt": dict(
        build=lambda: poisson_spec(lam=1.0),
        components=("entropy",),
        defaults={"entropy": {"tilt": "2.0", "refinements": [26, 51, 101]}}),
    "acviolation": dict(
        build=acviolation_spec,
        components=("reverse",),
        defaults={"marginals": {"grid": _grid(0.0, 1.0, 11)}}),
}


def demo_names():
    return sorted(DEMOS)


def get_demo(name: str):
    if name not in DEMOS:
        raise KeyError(f"unknown demo {name!r}; available: {', '.join(demo_names())}")
    return DEMOS[name]
