"""Acceptance suite: one test per criterion, one printed PASS/FAIL line each.

Run with `pytest tests/test_acceptance.py -v`; the criterion lines are
written to the real stdout so they stay visible under pytest capture.
"""

import math
import subprocess
import sys
import time

import numpy as np

from jumprev.core import (AtomicKernel, DriftField, LevyKernel,
                          TruncationDelta, effective_rate_matrix,
                          entropy_h, truncate_jump, young_theta)
from jumprev.demos import (chain5_spec, cycle3_spec, lattice_delta1_spec,
                           poisson_spec, reversible_spec)
from jumprev.entropy import TiltFunction, path_log_likelihood, relative_entropy, tilt_process
from jumprev.marginals import master_equation_marginals
from jumprev.reversal import (backward_drift, levy_reverse, reversibility_check,
                              solve_backward_characteristics, solve_flux_equation,
                              solve_flux_matrix)
from jumprev.simulate import reverse_path, simulate_forward
from jumprev.verify import (carre_du_champ, compare_reversal,
                            estimate_backward_intensity, ibp_residual,
                            state_function)

SEED = 20250809


def announce(capsys, criterion: int, ok: bool, detail: str) -> None:
    line = f"ACCEPTANCE {criterion}: {'PASS' if ok else 'FAIL'} - {detail}"
    with capsys.disabled():
        print(line, flush=True)
    assert ok, line


# ---------------------------------------------------------------------------
# 1. Poisson backward rate k/t, independent of lambda
# ---------------------------------------------------------------------------

def test_criterion_1_poisson_backward_rate(capsys):
    details = []
    ok = True
    for lam in (1.0, 2.0, 5.0):
        t0 = time.time()
        spec = poisson_spec(lam=lam)
        ens = simulate_forward(spec, 200_000, seed=SEED)
        grid = np.linspace(0.1, 1.0, 46)
        flow = master_equation_marginals(spec, grid)
        bc = solve_backward_characteristics(spec, flow)
        est = estimate_backward_intensity(ens, np.linspace(0.0, 1.0, 6), spec.space)
        report = compare_reversal(est, bc, weights=flow)
        elapsed = time.time() - t0

        # flux-solver output equals k/t on the grid times inside the bin
        flux_err = 0.0
        for sl in bc.slices:
            if 0.4 - 1e-9 <= sl.t <= 0.6 + 1e-9:
                for k in (1, 2, 3):
                    flux_err = max(flux_err, abs(sl.matrix[k, k - 1] - k / sl.t))
        ok &= flux_err <= 1e-9

        # empirical rate in the [0.4, 0.6] bin within 3 sigma of k/0.5,
        # sigma = statistical SE plus the midpoint-discretization gap
        worst_pull = 0.0
        for k in (1, 2, 3):
            cell = next(c for c in report.cells
                        if abs(c.t_lo - 0.4) < 1e-12 and c.from_idx == k
                        and c.to_idx == k - 1)
            sigma = math.hypot(cell.stderr, cell.theory - k / 0.5)
            pull = abs(cell.empirical - k / 0.5) / sigma
            worst_pull = max(worst_pull, pull)
            ok &= cell.usable and pull <= 3.0
        ok &= elapsed < 90.0
        details.append(f"lam={lam:g}: {elapsed:.0f}s flux_err={flux_err:.1e} "
                       f"worst_pull={worst_pull:.2f}")
    announce(capsys, 1, ok, "; ".join(details))


# ---------------------------------------------------------------------------
# 2. finite-state oracle equivalence
# ---------------------------------------------------------------------------

def test_criterion_2_oracle_equivalence(capsys):
    ok = True
    details = []
    for name, spec in (("cycle3", cycle3_spec()), ("chain5", chain5_spec())):
        grid = np.linspace(0.0, 1.0, 50)
        flow = master_equation_marginals(spec, grid)
        worst_flux = worst_double = 0.0
        for t in grid:
            p = flow.probabilities_at(float(t))
            fwd = effective_rate_matrix(spec, float(t))
            sl = solve_flux_equation(flow, spec, float(t))
            lhs = p[:, None] * fwd
            rhs = (p[:, None] * sl.matrix).T
            worst_flux = max(worst_flux, float(np.max(np.abs(lhs - rhs))))
            sl2 = solve_flux_matrix(p, sl.matrix, flow.points, t=float(t))
            worst_double = max(worst_double, float(np.max(np.abs(sl2.matrix - fwd))))
        ok &= worst_flux <= 1e-10 and worst_double <= 1e-9
        details.append(f"{name}: flux={worst_flux:.1e} double={worst_double:.1e}")
    announce(capsys, 2, ok, "; ".join(details))


# ---------------------------------------------------------------------------
# 3. reversibility of the exp(-V)-symmetric chain at stationarity
# ---------------------------------------------------------------------------

def test_criterion_3_reversibility(capsys):
    spec = reversible_spec()
    grid = np.linspace(0.0, 1.0, 21)
    flow = master_equation_marginals(spec, grid)
    ok = True
    worst = 0.0
    for t in grid:
        p = flow.probabilities_at(float(t))
        fwd = effective_rate_matrix(spec, float(t))
        ok &= reversibility_check(p, fwd).is_reversible
        sl = solve_flux_equation(flow, spec, float(t))
        worst = max(worst, float(np.max(np.abs(sl.matrix - fwd))))
    ok &= worst <= 1e-10
    announce(capsys, 3, ok, f"detailed balance on {grid.size} slices, "
                    f"max |Jback - Jfwd| = {worst:.1e}")


# ---------------------------------------------------------------------------
# 4. Levy reversal
# ---------------------------------------------------------------------------

def test_criterion_4_levy_reversal(capsys):
    kernel = LevyKernel(levy_atoms=(((1.0,), 0.5), ((-0.5,), 0.25)),
                        density="0.5*exp(-abs(xi0)) + 0.1*xi0**2",
                        support=((0.1, 3.0),), drift=(0.25,))
    b = np.array([0.25])
    b1, k1 = levy_reverse(b, kernel)
    ok = bool(np.array_equal(b1, -b))
    ok &= all(np.array_equal(x1, -x0) and w1 == w0
              for (x0, w0), (x1, w1) in zip(kernel.levy_atoms, k1.levy_atoms))
    g0 = kernel.density_part(0.0, np.zeros(1))[0]
    g1 = k1.density_part(0.0, np.zeros(1))[0]
    ok &= all(g1(-s) == g0(s) for s in np.linspace(0.11, 2.9, 57))
    b2, k2 = levy_reverse(b1, k1)
    ok &= bool(np.array_equal(b2, b))
    ok &= all(np.array_equal(x2, x0) and w2 == w0
              for (x0, w0), (x2, w2) in zip(kernel.levy_atoms, k2.levy_atoms))
    ok &= k2.support == kernel.support
    g2 = k2.density_part(0.0, np.zeros(1))[0]
    ok &= all(g2(s) == g0(s) for s in np.linspace(0.11, 2.9, 57))
    announce(capsys, 4, ok, "mirror exact for atoms and density; involution exact")


# ---------------------------------------------------------------------------
# 5. Girsanov entropy against the pathwise oracle
# ---------------------------------------------------------------------------

def test_criterion_5_girsanov_entropy(capsys):
    target = 2 * math.log(2) - 1
    spec = poisson_spec(lam=1.0)
    tilt = TiltFunction.constant(2.0)
    tilted = tilt_process(spec, tilt)
    flow = master_equation_marginals(tilted, np.linspace(0.0, 1.0, 101))
    rep = relative_entropy(spec, tilt, flow)
    ok = abs(rep.running_term - target) <= 1e-6 and rep.error_estimate <= 1e-6

    n = 100_000
    ens = simulate_forward(tilted, n, seed=SEED + 1)
    lls = np.array([path_log_likelihood(spec, tilt, p) for p in ens.paths])
    se = float(lls.std(ddof=1)) / math.sqrt(n)
    gap = abs(float(lls.mean()) - rep.running_term)
    ok &= gap <= 3 * se
    announce(capsys, 5, ok, f"running={rep.running_term:.9f} (target {target:.9f}, "
                    f"quad_err={rep.error_estimate:.1e}); "
                    f"MC gap {gap:.2e} <= 3 SE={3 * se:.2e}")


# ---------------------------------------------------------------------------
# 6. integration by parts residual
# ---------------------------------------------------------------------------

def test_criterion_6_ibp_residual(capsys):
    ok = True
    details = []
    rng = np.random.default_rng(SEED)
    for name, spec in (("cycle3", cycle3_spec()), ("chain5", chain5_spec())):
        flow = master_equation_marginals(spec, np.linspace(0.0, 1.0, 11))
        bc = solve_backward_characteristics(spec, flow)
        n = spec.space.n_states
        worst = 0.0
        for _ in range(20):
            u = state_function(spec.space, rng.uniform(-1.0, 1.0, n))
            v = state_function(spec.space, rng.uniform(-1.0, 1.0, n))
            for t in (0.2, 0.5, 0.9):
                out = ibp_residual(spec, bc, flow, t, u, v)
                worst = max(worst, abs(out["residual"]))
        ok &= worst <= 1e-10
        details.append(f"{name}: max |residual| = {worst:.1e}")
    announce(capsys, 6, ok, "; ".join(details))


# ---------------------------------------------------------------------------
# 7. backward drift
# ---------------------------------------------------------------------------

def test_criterion_7_backward_drift(capsys):
    # delta = 0: exactly -b, bit for bit
    kernel = AtomicKernel(atom_list=(((1.0, 0.0), 1.0),), dim=2)
    ok = True
    for b in ([3.0, -1.0], [0.0, 0.0], [-2.5, 4.25]):
        drift = DriftField.constant(b)
        for t in (0.0, 0.4, 1.0):
            out = backward_drift(drift, kernel, None, TruncationDelta(0.0),
                                 t, [0.2, -0.3])
            ok &= bool(np.array_equal(out, -np.asarray(b)))

    # delta = 1 lattice chain: aggregate drift identity
    spec = lattice_delta1_spec()
    flow = master_equation_marginals(spec, np.linspace(0.0, 1.0, 21))
    bc = solve_backward_characteristics(spec, flow)
    worst = 0.0
    for t in (0.1, 0.35, 0.6, 0.95):
        p = flow.probabilities_at(t)
        agg = 0.0
        for i, x in enumerate(flow.points):
            if p[i] > 0:
                agg += p[i] * (spec.drift(t, x) + bc.drift_at(t, x))[0]
        worst = max(worst, abs(agg))
    ok &= worst <= 1e-8
    announce(capsys, 7, ok, f"delta=0 gives -b exactly; lattice aggregate "
                    f"|integral (bfwd+bback) dp| = {worst:.1e}")


# ---------------------------------------------------------------------------
# 8. negative controls through the CLI
# ---------------------------------------------------------------------------

def test_criterion_8_negative_controls(tmp_path, capsys):
    perturbed = subprocess.run(
        [sys.executable, "-m", "jumprev.cli", "verify", "--demo", "poisson",
         "--seed", str(SEED), "--n-paths", "30000", "--perturb", "1.2",
         "--out", str(tmp_path / "p")],
        capture_output=True, text=True)
    ok = perturbed.returncode == 4 and "VERDICT: FAIL" in perturbed.stdout

    violation = subprocess.run(
        [sys.executable, "-m", "jumprev.cli", "reverse", "--demo", "acviolation",
         "--out", str(tmp_path / "v")],
        capture_output=True, text=True)
    ok &= violation.returncode == 3 and "state 1" in violation.stderr
    announce(capsys, 8, ok, f"perturbed verify exit={perturbed.returncode}; "
                    f"AC violation exit={violation.returncode} with offender named")


# ---------------------------------------------------------------------------
# 9. property suite
# ---------------------------------------------------------------------------

def test_criterion_9_properties(tmp_path, capsys):
    ok = True
    # h: nonnegative, zero only at 1, convex on a grid
    grid = np.linspace(0.0, 10.0, 201)
    hv = np.array([entropy_h(a) for a in grid])
    ok &= bool(np.all(hv >= 0.0)) and entropy_h(1.0) == 0.0
    for lam in (0.25, 0.5, 0.75):
        mix = np.array([entropy_h(lam * a + (1 - lam) * b)
                        for a in grid[::20] for b in grid[::20]])
        bound = np.array([lam * entropy_h(a) + (1 - lam) * entropy_h(b)
                          for a in grid[::20] for b in grid[::20]])
        ok &= bool(np.all(mix <= bound + 1e-12))
    ok &= all(young_theta(a) == entropy_h(abs(a) + 1.0)
              for a in np.linspace(-5, 5, 101))
    ok &= bool(np.array_equal(truncate_jump([0.5], 0.0), [0.0]))

    # reverse_path involution on simulated paths
    ens = simulate_forward(cycle3_spec(), 200, seed=SEED)
    ok &= all(reverse_path(reverse_path(p)) is p for p in ens.paths)

    # Gamma symmetry and positivity on 1000 random probes
    spec = chain5_spec()
    rng = np.random.default_rng(SEED)
    for _ in range(1000):
        u = state_function(spec.space, rng.uniform(-1, 1, 5))
        v = state_function(spec.space, rng.uniform(-1, 1, 5))
        x = spec.space.state_point(int(rng.integers(0, 5)))
        ok &= carre_du_champ(spec.kernel, 0.0, x, u, v) == \
            carre_du_champ(spec.kernel, 0.0, x, v, u)
        ok &= carre_du_champ(spec.kernel, 0.0, x, u, u) >= 0.0

    # determinism of the commands under a fixed seed across thread counts
    outs = []
    for tag, threads in (("t1", "1"), ("t2", "3")):
        out = tmp_path / tag
        sim = subprocess.run(
            [sys.executable, "-m", "jumprev.cli", "simulate", "--demo", "cycle3",
             "--seed", "7", "--n-paths", "400", "--threads", threads,
             "--out", str(out)], capture_output=True, text=True)
        ok &= sim.returncode == 0
        ver = subprocess.run(
            [sys.executable, "-m", "jumprev.cli", "verify", "--demo", "cycle3",
             "--seed", "7", "--n-paths", "2000", "--threads", threads,
             "--out", str(out)], capture_output=True, text=True)
        ok &= ver.returncode == 0
        outs.append(out)
    for name in ("ensemble.jsonl", "summary.csv", "reversal_report.csv",
                 "intensity.csv"):
        ok &= (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    announce(capsys, 9, ok, "h properties, involution, Gamma symmetry/positivity, "
                    "thread-count determinism")
