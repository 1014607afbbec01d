"""varimatch: partial shape registration with oriented varifolds.

The library aligns triangle meshes and polylines whose fields of view
only partly overlap.  Shapes are encoded as discrete oriented varifolds
(one center, unit director and weight per element) and compared with an
asymmetric partial-matching dissimilarity that charges only the source
mass left uncovered by the target, so a truncated shape can be matched
into a complete one without being dragged toward the missing parts.

Registration runs rigidly (clamped rotation plus translation, or a
classic ICP baseline) or deformably via geodesic shooting of a
Hamiltonian particle system, with mass-preservation regularizers that
counter the shrinkage partial matching would otherwise induce.  All
numerics are plain numpy and deterministic; the number of worker
threads is capped by the VARIMATCH_THREADS environment variable.

A quick session:

    >>> import varimatch as vm
    >>> target = vm.synth_sphere(10.0, 3)
    >>> source = vm.truncate_by_cylinder(target, (0, 0, 0), (0, 0, 1), 6.0)
    >>> cfg = vm.RegistrationConfig(sigma_w_schedule=(4.0, 2.0), lambda1=1000.0)
    >>> result = vm.pipeline("translation+lddmm", source, target, cfg)
    >>> round(vm.surface_metric(vm.face_elements(result.deformed_source),
    ...                         vm.face_elements(target)), 3) <= 0.2
    True

The `varimatch` command line exposes the same pipelines; see the
README for file formats and the config schema.
"""

from .geometry import (
    DegenerateElementError,
    DiscreteVarifold,
    EmptyTruncationError,
    Mesh,
    MeshIOError,
    Polyline,
    RigidTransform,
    apply_rigid,
    barycenter,
    barycenter_translation,
    face_elements,
    inconsistent_face_pairs,
    load_mesh,
    load_polyline_csv,
    matrix_to_euler_deg,
    save_mesh,
    save_polyline_csv,
    segment_elements,
    synth_ellipsoid,
    synth_sphere,
    truncate_by_cylinder,
    vertex_gradients,
)
from .varifold import (
    DegenerateTargetError,
    VarifoldKernelConfig,
    distance_sq,
    icp_dissimilarity,
    inner_product,
    nearest_center_matches,
    orientation_kernel,
    partial_dissimilarity,
    partial_dissimilarity_grad,
    regularizer_global,
    regularizer_global_grad,
    regularizer_local,
    regularizer_local_grad,
    representer_values,
    smooth_min_one,
    spatial_kernel,
)
from .deformation import (
    DeformationKernel,
    DivergenceError,
    FlowTrajectory,
    ShootingState,
    deform_grid,
    deform_mesh,
    endpoint_adjoint,
    flow_points,
    grid_nodes,
    hamiltonian,
    kv_scalar,
    path_energy,
    read_displacement_field,
    shoot,
    write_displacement_field,
)
from .lbfgs import LbfgsOptions, LbfgsResult, gradient_check, lbfgs_minimize
from .registration import (
    PIPELINE_METHODS,
    RegistrationConfig,
    RegistrationResult,
    pipeline,
    register_icp_rigid,
    register_lddmm,
    register_rigid_partial,
    register_translation_partial,
)
from .evaluation import (
    LandmarkSet,
    emit_report,
    landmark_metric,
    load_landmarks_csv,
    save_landmarks_csv,
    surface_metric,
    transport_landmarks,
    transport_points,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # geometry
    "Mesh",
    "Polyline",
    "DiscreteVarifold",
    "RigidTransform",
    "MeshIOError",
    "DegenerateElementError",
    "EmptyTruncationError",
    "apply_rigid",
    "matrix_to_euler_deg",
    "face_elements",
    "segment_elements",
    "barycenter",
    "barycenter_translation",
    "vertex_gradients",
    "truncate_by_cylinder",
    "synth_sphere",
    "synth_ellipsoid",
    "inconsistent_face_pairs",
    "load_mesh",
    "save_mesh",
    "load_polyline_csv",
    "save_polyline_csv",
    # varifold
    "VarifoldKernelConfig",
    "DegenerateTargetError",
    "spatial_kernel",
    "orientation_kernel",
    "representer_values",
    "inner_product",
    "distance_sq",
    "smooth_min_one",
    "partial_dissimilarity",
    "partial_dissimilarity_grad",
    "icp_dissimilarity",
    "nearest_center_matches",
    "regularizer_global",
    "regularizer_global_grad",
    "regularizer_local",
    "regularizer_local_grad",
    # deformation
    "DeformationKernel",
    "ShootingState",
    "FlowTrajectory",
    "DivergenceError",
    "kv_scalar",
    "hamiltonian",
    "path_energy",
    "shoot",
    "flow_points",
    "endpoint_adjoint",
    "deform_mesh",
    "deform_grid",
    "grid_nodes",
    "write_displacement_field",
    "read_displacement_field",
    # optimization
    "LbfgsOptions",
    "LbfgsResult",
    "lbfgs_minimize",
    "gradient_check",
    # registration
    "RegistrationConfig",
    "RegistrationResult",
    "PIPELINE_METHODS",
    "pipeline",
    "register_rigid_partial",
    "register_translation_partial",
    "register_icp_rigid",
    "register_lddmm",
    # evaluation
    "LandmarkSet",
    "load_landmarks_csv",
    "save_landmarks_csv",
    "transport_points",
    "transport_landmarks",
    "landmark_metric",
    "surface_metric",
    "emit_report",
]
