"""Simulation and verification laboratory for time reversal of Markov jump
processes: forward Monte Carlo, flux-equation backward kernels, Girsanov
tilting, and statistical validation against reversed sample paths."""

from .core import (AtomicKernel, DensityKernel, DriftField, FiniteRateMatrix,
                   HypothesisReport, InitialLaw, JumpKernel, LevyKernel,
                   ProcessSpec, StateSpace, TiltedKernel, TruncationDelta,
                   effective_rate_matrix, entropy_h, probe_hypotheses,
                   truncate_jump, young_theta)
from .entropy import (EntropyReport, TiltFunction, path_log_likelihood,
                      relative_entropy, tilt_process)
from .marginals import (MarginalFlow, empirical_marginals,
                        master_equation_marginals)
from .reversal import (BackwardCharacteristics, FluxMeasure, KernelSlice,
                       backward_drift, check_absolute_continuity, flux_measure,
                       levy_reverse, reversibility_check,
                       solve_backward_characteristics, solve_flux_equation,
                       solve_flux_matrix)
from .simulate import (PathEnsemble, Trajectory, load_ensemble_jsonl,
                       reverse_ensemble, reverse_path, save_ensemble_jsonl,
                       simulate_forward, state_at, terminal_state)
from .verify import (IntensityEstimate, ReversalReport, apply_generator,
                     carre_du_champ, compare_reversal,
                     estimate_backward_intensity, ibp_residual, state_function)

__version__ = "0.1.0"
