"""Zero-range lattice gas in a quenched chemotactic environment.

Exact ensemble mathematics, event-driven simulation, the limiting
diffusion equation, and a verification harness tying them together.
"""

__version__ = "0.1.0"

from .ensemble import (CanonicalSpec, EnsembleCalculator, RateFunction,  # noqa: F401
                       annealed_R, canonical_pmf, density_M, equivalence_gap,
                       fugacity_Phi, g_factorial, harmonic_mean_ftilde,
                       partition_Z, site_pmf)
from .environment import (AdditiveModel, EnvironmentField,  # noqa: F401
                          GaussianBumpProfile, PoissonMoleculeModel,
                          build_rate_field, eval_mean_theta,
                          sample_additive_field, sample_molecule_field)
from .kmc import JumpRecord, Simulator  # noqa: F401
from .lattice import (BallStencil, DensityField, ParticleConfig,  # noqa: F401
                      ball_density, block_average, pair_with_test_function,
                      replacement_observable, two_block_statistic)
from .pde import (PdeProblem, diffusivity_grid, field_error, pde_run,  # noqa: F401
                  pde_step, stationary_profile)
