"""lbkin: velocity-space solver for the spatially homogeneous Lenard-Balescu
equation with smooth screened interaction potentials.

The collision kernel carries the wave-vector-resolved dielectric shielding
factor 1/|eps|^2; with eps = 1 the operator reduces to the Landau (Fokker-
Planck-Landau) operator with the matching collision strength, and that limit
is used throughout the test-suite as a cross-check.
"""

__version__ = "0.1.0"

from .grid import (
    VelocityGrid,
    DensityField,
    DirectionSet,
    UGrid,
    make_grid,
    make_directions,
    make_u_grid,
    maxwellian,
    central_gradient,
    divergence,
    directional_marginal,
)
from .fieldio import save_field, load_field, save_checkpoint, load_checkpoint
from .potential import (
    RadialSpectrum,
    gaussian_spectrum,
    table_spectrum,
    rescale_spectrum,
    fold_temperature,
    landau_constant,
    admissibility_report,
)
from .dispersion import (
    dawson,
    h_screening,
    eps_maxwellian,
    eps_maxwellian_abs2,
    maxwellian_z,
    ScreeningTable,
    build_screening_table,
    maxwellian_screening_table,
    penrose_scan,
    PenroseScan,
)
from .kernel import (
    DispersionDegeneracyError,
    KernelMatrix,
    CoefficientField,
    radial_kernel_weight,
    RadialWeightTable,
    assemble_kernel,
    landau_kernel,
    equilibrium_coefficients,
    equilibrium_weight_tables,
    landau_weight_tables,
    screening_weight_tables,
)
from .solver import SolverAbort, SolverConfig, CollisionOperator, RunResult, run
from .diagnostics import (
    moments,
    EntropyValue,
    boltzmann_entropy,
    relative_entropy,
    matched_maxwellian,
    entropy_dissipation,
    collision_invariant_basis,
    pi0_project,
    WeightSpec,
    weighted_l2,
    sobolev_norm,
    dissipation_norm,
    CoercivityProbe,
    coercivity_probe,
)
from .harness import ExperimentSpec, load_experiment, run_experiment

__all__ = [name for name in dir() if not name.startswith("_")]
