import math

import numpy as np
import pytest

from jumprev.core import (AtomicKernel, DriftField, StateSpace,
                          TruncationDelta, effective_rate_matrix)
from jumprev.demos import chain5_spec, cycle3_spec, poisson_spec, reversible_spec
from jumprev.errors import BinMismatch, EmptyEnsemble
from jumprev.marginals import master_equation_marginals
from jumprev.reversal import (BackwardCharacteristics, KernelSlice,
                              solve_backward_characteristics)
from jumprev.simulate import PathEnsemble, Trajectory, reverse_ensemble, simulate_forward
from jumprev.verify import (apply_generator, carre_du_champ, compare_reversal,
                            estimate_backward_intensity, ibp_residual,
                            state_function)


def fake_backward_from_matrix(times, matrix, points, delta=0.0):
    """Wrap a constant rate matrix as BackwardCharacteristics (test double)."""
    slices = tuple(KernelSlice(t=float(t), points=points, matrix=matrix,
                               empty_rows=np.zeros(matrix.shape[0], dtype=bool))
                   for t in times)
    drift = DriftField.zero(points.shape[1])
    return BackwardCharacteristics(times=np.asarray(times, float), slices=slices,
                                   delta=TruncationDelta(delta),
                                   backward_drift_field=drift, diagnostics=())


# ---------------------------------------------------------------------------
# intensity estimation
# ---------------------------------------------------------------------------

def test_constant_paths_zero_rates():
    space = StateSpace.finite(3)
    paths = [Trajectory(initial_state=[1.0], times=[], jumps=np.empty((0, 1)),
                        horizon=1.0) for _ in range(25)]
    est = estimate_backward_intensity(PathEnsemble(paths=paths, seed=0),
                                      np.linspace(0, 1, 5), space)
    assert est.counts.sum() == 0
    # occupation concentrates in state 1: n_paths * bin width per bin
    assert np.allclose(est.occupancy[:, 1], 25 * 0.25)
    assert np.all(est.occupancy[:, [0, 2]] == 0.0)


def test_empty_ensemble_rejected():
    with pytest.raises(EmptyEnsemble):
        estimate_backward_intensity(PathEnsemble(paths=[], seed=0),
                                    np.linspace(0, 1, 3), StateSpace.finite(2))


def test_cycle_reversed_rates():
    spec = cycle3_spec()
    ens = simulate_forward(spec, 30_000, seed=55)
    est = estimate_backward_intensity(ens, np.linspace(0, 1, 6), spec.space)
    # reversed cycle 0->2->1->0: empirical rates near 1 in every usable cell
    reversed_pairs = [(0, 2), (2, 1), (1, 0)]
    for tb in range(1, 5):
        for i, j in reversed_pairs:
            if est.occupancy[tb, i] > 0 and est.counts[tb, i, j] >= 10:
                rate = est.rate(tb, i, j)
                se = est.stderr(tb, i, j)
                assert abs(rate - 1.0) < 4 * se
    # forward-direction cells carry no backward jumps
    for i, j in [(0, 1), (1, 2), (2, 0)]:
        assert est.counts[:, i, j].sum() == 0


def test_estimator_involution_through_double_reversal():
    spec = cycle3_spec()
    ens = simulate_forward(spec, 300, seed=9)
    double = reverse_ensemble(reverse_ensemble(ens))
    e1 = estimate_backward_intensity(ens, np.linspace(0, 1, 4), spec.space)
    e2 = estimate_backward_intensity(double, np.linspace(0, 1, 4), spec.space)
    assert np.array_equal(e1.counts, e2.counts)
    assert np.array_equal(e1.occupancy, e2.occupancy)


# ---------------------------------------------------------------------------
# compare_reversal
# ---------------------------------------------------------------------------

def _poisson_setup(lam=2.0, n_paths=30_000, seed=77):
    spec = poisson_spec(lam=lam)
    ens = simulate_forward(spec, n_paths, seed=seed)
    flow = master_equation_marginals(spec, np.linspace(0.1, 1.0, 46))
    bc = solve_backward_characteristics(spec, flow)
    est = estimate_backward_intensity(ens, np.linspace(0, 1, 6), spec.space)
    return spec, est, bc, flow


def test_poisson_verification_passes():
    _, est, bc, flow = _poisson_setup()
    report = compare_reversal(est, bc, weights=flow)
    assert report.n_usable > 5
    assert report.verdict
    cell = next(c for c in report.cells
                if c.t_lo == pytest.approx(0.4) and c.from_idx == 1 and c.to_idx == 0)
    assert abs(cell.empirical - 1.0 / 0.5) < 3 * math.hypot(cell.stderr,
                                                            cell.theory - 2.0)


def test_perturbed_theory_fails():
    _, est, bc, flow = _poisson_setup()
    report = compare_reversal(est, bc, weights=flow, rate_scale=1.2)
    assert not report.verdict
    assert abs(report.worst.z) > 10


def test_wrong_direction_fails_cycle():
    spec = cycle3_spec()
    ens = simulate_forward(spec, 20_000, seed=12)
    est = estimate_backward_intensity(ens, np.linspace(0, 1, 6), spec.space)
    forward = effective_rate_matrix(spec, 0.0)
    wrong = fake_backward_from_matrix(np.linspace(0, 1, 11), forward,
                                      spec.space.embedding)
    report = compare_reversal(est, wrong)
    assert not report.verdict
    assert abs(report.worst.z) > 10


def test_reversible_passes_against_forward_kernel():
    spec = reversible_spec()
    ens = simulate_forward(spec, 20_000, seed=44)
    est = estimate_backward_intensity(ens, np.linspace(0, 1, 6), spec.space)
    forward = effective_rate_matrix(spec, 0.0)
    theory = fake_backward_from_matrix(np.linspace(0, 1, 11), forward,
                                       spec.space.embedding)
    flow = master_equation_marginals(spec, np.linspace(0, 1, 11))
    report = compare_reversal(est, theory, weights=flow)
    assert report.verdict


def test_bin_mismatch_detected():
    _, est, bc, _ = _poisson_setup(n_paths=200)
    other = fake_backward_from_matrix([0.5], np.zeros((3, 3)),
                                      np.arange(3.0).reshape(-1, 1))
    with pytest.raises(BinMismatch):
        compare_reversal(est, other)


def test_bins_touching_zero_excluded_by_default():
    _, est, bc, flow = _poisson_setup(n_paths=2_000)
    report = compare_reversal(est, bc, weights=flow)
    assert all(c.t_lo > 0.0 for c in report.cells)
    report_all = compare_reversal(est, bc, weights=flow,
                                  exclude_touching_zero=False)
    assert any(c.t_lo == 0.0 for c in report_all.cells)


# ---------------------------------------------------------------------------
# carre du champ and generators
# ---------------------------------------------------------------------------

def test_gamma_constant_function_vanishes():
    kernel = AtomicKernel(atom_list=(((1.0,), 3.0),))
    u = lambda x: 5.0                                   # noqa: E731
    v = lambda x: float(x[0] ** 2)                      # noqa: E731
    assert carre_du_champ(kernel, 0.0, np.array([0.0]), u, v) == 0.0


def test_gamma_single_atom_value():
    lam, c = 2.5, 0.7
    kernel = AtomicKernel(atom_list=(((1.0,), lam),))
    u = lambda x: c * float(x[0])                       # noqa: E731
    got = carre_du_champ(kernel, 0.0, np.array([0.0]), u, u)
    assert got == pytest.approx(lam * c * c, abs=1e-12)


def test_gamma_symmetric_and_nonnegative():
    spec = chain5_spec()
    rng = np.random.default_rng(3)
    for _ in range(25):
        u = state_function(spec.space, rng.uniform(-1, 1, 5))
        v = state_function(spec.space, rng.uniform(-1, 1, 5))
        x = spec.space.state_point(rng.integers(0, 5))
        a = carre_du_champ(spec.kernel, 0.0, x, u, v)
        b = carre_du_champ(spec.kernel, 0.0, x, v, u)
        assert a == b
        assert carre_du_champ(spec.kernel, 0.0, x, u, u) >= 0.0


def test_apply_generator_examples():
    spec = cycle3_spec()
    u_const = lambda x: 2.0                             # noqa: E731
    assert apply_generator(spec, "forward", u_const, 0.0,
                           np.array([0.0])) == 0.0
    # indicator of state 1: generator row of the chain
    u_ind = state_function(spec.space, [0.0, 1.0, 0.0])
    got = apply_generator(spec, "forward", u_ind, 0.0, np.array([0.0]))
    assert got == pytest.approx(1.0, abs=1e-12)          # rate(0 -> 1) * 1
    # Poisson: u with unit increments has generator lambda
    pspec = poisson_spec(lam=3.0)
    u_lin = state_function(pspec.space, np.arange(51.0))
    got = apply_generator(pspec, "forward", u_lin, 0.0, np.array([4.0]))
    assert got == pytest.approx(3.0, abs=1e-12)


def test_backward_generator_uses_solved_kernel():
    spec = cycle3_spec()
    flow = master_equation_marginals(spec, np.linspace(0, 1, 11))
    bc = solve_backward_characteristics(spec, flow)
    u_ind = state_function(spec.space, [0.0, 0.0, 1.0])
    # backward chain jumps 0 -> 2 at rate 1
    got = apply_generator(bc, "backward", u_ind, 0.5, np.array([0.0]))
    assert got == pytest.approx(1.0, abs=1e-10)


# ---------------------------------------------------------------------------
# integration by parts residual
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("build", [cycle3_spec, chain5_spec, reversible_spec],
                         ids=["cycle3", "chain5", "reversible"])
def test_ibp_residual_vanishes(build):
    spec = build()
    n = spec.space.n_states
    flow = master_equation_marginals(spec, np.linspace(0, 1, 11))
    bc = solve_backward_characteristics(spec, flow)
    rng = np.random.default_rng(17)
    for _ in range(20):
        u = state_function(spec.space, rng.uniform(-1, 1, n))
        v = state_function(spec.space, rng.uniform(-1, 1, n))
        out = ibp_residual(spec, bc, flow, 0.5, u, v)
        assert abs(out["residual"]) <= 1e-10
        assert out["error_bar"] == 0.0


def test_ibp_constant_u_identically_zero():
    spec = cycle3_spec()
    flow = master_equation_marginals(spec, np.linspace(0, 1, 11))
    bc = solve_backward_characteristics(spec, flow)
    u = lambda x: 4.2                                   # noqa: E731
    v = state_function(spec.space, [1.0, -2.0, 0.5])
    out = ibp_residual(spec, bc, flow, 0.3, u, v)
    assert out["residual"] == 0.0
