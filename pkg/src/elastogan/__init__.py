"""Adversarial inference of elastic-modulus random fields from displacement data.

The pipeline: sample a lognormal modulus field from its truncated KL
expansion, solve the plane-stress forward problem to synthesize displacement
snapshots, then train a WGAN-GP whose generator pair is tied together by the
equilibrium residual and boundary conditions at collocation points, and
finally score the learned modulus distribution against reference statistics.
"""

from .config import RunConfig
from .evaluate import (
    EvalReport,
    FieldEnsemble,
    ReferenceStatistics,
    build_report,
    correlation_1d,
    ensemble_from_generator,
    moment_fields,
    pointwise_pdf,
    reference_ensemble,
    relative_l2_error,
    write_report,
)
from .fem import (
    BoundaryLoad,
    MeshSpec,
    Snapshot,
    SnapshotDataset,
    generate_dataset,
    make_sensor_grid,
    solve_plane_stress,
)
from .grids import UniformGrid2D
from .network import (
    Jet2,
    MlpNetwork,
    TapedNetwork,
    forward,
    forward_jet,
    init_network,
    param_gradient,
)
from .physics import (
    CollocationSet,
    ElasticityConstants,
    bc_discrepancies,
    loss_bc,
    loss_pde,
    make_collocation,
    pde_residual,
)
from .randomfield import (
    FieldSample,
    KernelSpec,
    RandomFieldModel,
    build_kl_model,
    kernel_eval,
    sample_field,
)
from .training import (
    AdamState,
    TrainingConfig,
    TrainingLog,
    adam_step,
    critic_loss,
    generate_snapshot,
    generator_adversarial_loss,
    pigan_losses,
    train,
)

__version__ = "0.1.0"
