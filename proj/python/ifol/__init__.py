"""implicit finite operator learning: python bindings over the C++ core."""

from ifol._core import (  # noqa: F401
    AllenCahn,
    BoundaryEntry,
    BoundarySpec,
    Checkpoint,
    ConfigError,
    CoordMap,
    DirichletEntry,
    DirichletSpec,
    Engine,
    FieldNetConfig,
    FieldNetParams,
    FourierSpec,
    GrfSpec,
    Hyperelastic,
    IoError,
    LatentCode,
    LinearElasticity,
    Mesh,
    NewtonConfig,
    NumericalError,
    Sample,
    SensitivityResult,
    SigmoidSpec,
    StationaryDiffusion,
    TrainConfig,
    TransientThermal,
    adjoint_sensitivity,
    apply_dirichlet,
    assemble,
    boundary_load,
    decode,
    error_metrics,
    fem_rollout,
    fourier_field,
    generate_grid,
    grf_field,
    init_params,
    integrate_solution,
    load_checkpoint,
    load_dataset,
    load_mesh,
    make_dataset,
    newton_solve,
    nodal_field,
    pearson,
    random_bc_vector,
    save_checkpoint,
    save_dataset,
    save_mesh,
    sigmoid_project,
    solution_components,
    stream_seed,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
