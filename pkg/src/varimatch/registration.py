"""Registration drivers: rigid, ICP and geodesic-shooting alignment.

Each driver minimizes a partial-matching objective and returns a
RegistrationResult carrying the optimized map, the deformed source, a
per-iteration objective trace and convergence metadata.  The pipeline
entry point chains a barycenter shift, an optional rigid or translation
stage and an optional multi-scale deformable stage; every stage starts
from the previous stage's output and contributes one transport map.
"""

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .deformation import (
    DeformationKernel,
    DivergenceError,
    ShootingState,
    endpoint_adjoint,
    hamiltonian_momentum_grad,
    path_energy,
    shoot,
)
from .geometry import (
    DegenerateElementError,
    DiscreteVarifold,
    Mesh,
    RigidTransform,
    _euler_matrices_deg,
    apply_rigid,
    barycenter,
    barycenter_translation,
    face_elements,
    matrix_to_euler_deg,
    vertex_gradients,
)
from .lbfgs import LbfgsOptions, gradient_check, lbfgs_minimize
from .varifold import (
    VarifoldKernelConfig,
    partial_dissimilarity_grad,
    nearest_center_matches,
    regularizer_global_grad,
    regularizer_local_grad,
)

__all__ = [
    "RegistrationConfig",
    "RegistrationResult",
    "register_rigid_partial",
    "register_translation_partial",
    "register_icp_rigid",
    "register_lddmm",
    "pipeline",
    "gradient_check",
    "PIPELINE_METHODS",
]

REGULARIZERS = ("none", "global", "local")
PIPELINE_METHODS = (
    "icp_rigid",
    "rigid_pm",
    "translation",
    "rigid_pm+lddmm",
    "translation+lddmm",
)


@dataclass(frozen=True)
class RegistrationConfig:
    """Knobs shared by every registration driver.

    sigma_w_schedule lists the spatial kernel scales (mm) visited from
    coarse to fine; rigid stages use only the first entry.  sigma0 is
    the deformation kernel scale, defaulting to half the target
    bounding-box diagonal when left as None.  lambda1 weights the path
    energy, lambda2 the mass regularizer named by `regularizer`.
    """

    sigma_w_schedule: tuple = (10.0, 5.0)
    sigma0: float = None
    lambda1: float = 1.0e7
    lambda2: float = 1.0
    regularizer: str = "local"
    epsilon: float = 1.0e-6
    n_steps: int = 10
    max_angle_deg: float = 15.0
    scale_divisors: tuple = (1.0, 4.0, 8.0, 16.0)
    weighted_quadrature: bool = False
    lbfgs: LbfgsOptions = field(default_factory=LbfgsOptions)

    def __post_init__(self):
        sched = tuple(float(s) for s in self.sigma_w_schedule)
        if len(sched) == 0:
            raise ValueError("sigma_w_schedule must be nonempty")
        if min(sched) <= 0.0:
            raise ValueError("sigma_w_schedule entries must be positive")
        if any(b >= a for a, b in zip(sched, sched[1:])):
            raise ValueError("sigma_w_schedule must be strictly decreasing")
        object.__setattr__(self, "sigma_w_schedule", sched)
        if self.sigma0 is not None and not self.sigma0 > 0.0:
            raise ValueError("sigma0 must be positive")
        if not self.lambda1 > 0.0:
            raise ValueError("lambda1 must be positive")
        if self.lambda2 < 0.0:
            raise ValueError("lambda2 must be non-negative")
        if self.regularizer not in REGULARIZERS:
            raise ValueError(f"regularizer must be one of {REGULARIZERS}")
        if not 0.0 < self.epsilon <= 1.0e-2:
            raise ValueError("epsilon must lie in (0, 1e-2]")
        if int(self.n_steps) < 1:
            raise ValueError("n_steps must be at least 1")
        object.__setattr__(self, "n_steps", int(self.n_steps))
        if not self.max_angle_deg > 0.0:
            raise ValueError("max_angle_deg must be positive")
        object.__setattr__(
            self, "scale_divisors", tuple(float(s) for s in self.scale_divisors)
        )

    def kernel_config(self, sigma_w):
        return VarifoldKernelConfig(sigma_w, self.epsilon)

    def resolve_sigma0(self, target):
        """sigma0, defaulting to half the target bounding-box diagonal.

        Accepts a Mesh or a DiscreteVarifold; the varifold fallback uses
        the element centers' bounding box.
        """
        if self.sigma0 is not None:
            return float(self.sigma0)
        if isinstance(target, Mesh):
            return 0.5 * target.bounding_box_diagonal()
        span = target.centers.max(axis=0) - target.centers.min(axis=0)
        return 0.5 * float(np.sqrt((span * span).sum()))

    def to_dict(self):
        lb = self.lbfgs
        return {
            "sigma_w_schedule": list(self.sigma_w_schedule),
            "sigma0": None if self.sigma0 is None else float(self.sigma0),
            "lambda1": float(self.lambda1),
            "lambda2": float(self.lambda2),
            "regularizer": self.regularizer,
            "epsilon": float(self.epsilon),
            "n_steps": self.n_steps,
            "max_angle_deg": float(self.max_angle_deg),
            "scale_divisors": list(self.scale_divisors),
            "weighted_quadrature": bool(self.weighted_quadrature),
            "lbfgs": {
                "max_iters": lb.max_iters,
                "memory": lb.memory,
                "grad_tol": lb.grad_tol,
                "grad_tol_abs": lb.grad_tol_abs,
                "wolfe_c1": lb.wolfe_c1,
                "wolfe_c2": lb.wolfe_c2,
                "max_line_evals": lb.max_line_evals,
            },
        }

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        unknown = set(data) - {
            "sigma_w_schedule", "sigma0", "lambda1", "lambda2", "regularizer",
            "epsilon", "n_steps", "max_angle_deg", "scale_divisors",
            "weighted_quadrature", "lbfgs",
        }
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "lbfgs" in data:
            data["lbfgs"] = LbfgsOptions(**data["lbfgs"])
        if "sigma_w_schedule" in data:
            data["sigma_w_schedule"] = tuple(data["sigma_w_schedule"])
        if "scale_divisors" in data:
            data["scale_divisors"] = tuple(data["scale_divisors"])
        return cls(**data)


@dataclass
class RegistrationResult:
    """Outcome of one registration run.

    maps lists the transport maps in application order; each entry is a
    RigidTransform or a (FlowTrajectory, DeformationKernel) pair, and
    stages carries one metadata dict per executed stage.
    """

    method: str
    final_state: object
    deformed_source: object
    objective_trace: list
    converged: bool
    reason: str
    wall_time_s: float
    stages: list = field(default_factory=list)
    maps: list = field(default_factory=list)


def _squash_angles(u, max_angle_deg):
    th = np.tanh(u)
    return max_angle_deg * th, np.deg2rad(max_angle_deg) * (1.0 - th * th)


def _transform_about(rot, t, origin):
    """World-frame transform equal to rotating about `origin` then shifting."""
    return RigidTransform(
        matrix_to_euler_deg(rot), origin + t - rot @ origin
    )


def _run_rigid(source, target, cfg, rotate, source_mesh):
    """Shared driver for the rigid and translation-only stages.

    The rotation parameters pass through the tanh squash so the
    optimizer stays unconstrained while the realized angles remain
    strictly inside the clamp; rotation is taken about the source
    barycenter, which keeps the angle and translation blocks of the
    parameterization nearly orthogonal.
    """
    start = time.perf_counter()
    sigma_w = cfg.sigma_w_schedule[0]
    vk = cfg.kernel_config(sigma_w)
    origin = barycenter(source)
    weighted = cfg.weighted_quadrature

    def objective(u):
        if rotate:
            angles, dang_du = _squash_angles(u[:3], cfg.max_angle_deg)
            t = u[3:]
            rot, drots = _euler_matrices_deg(angles)
        else:
            t = u
            rot, drots = np.eye(3), None
        xc = source.centers - origin
        moved = DiscreteVarifold(
            xc @ rot.T + origin + t, source.directors @ rot.T, source.weights
        )
        val, gx, gd, _ = partial_dissimilarity_grad(
            moved, target, vk, weighted_quadrature=weighted
        )
        gt = gx.sum(axis=0)
        if not rotate:
            return val, gt
        gang = np.array([
            (gx * (xc @ dr.T)).sum() + (gd * (source.directors @ dr.T)).sum()
            for dr in drots
        ])
        return val, np.concatenate([gang * dang_du, gt])

    trace = []

    def record(it, x, value, gnorm):
        trace.append({
            "stage": 0,
            "sigma_w": sigma_w,
            "iter": it,
            "total": value,
            "data": value,
            "energy": 0.0,
            "regularizer": 0.0,
        })

    n_params = 6 if rotate else 3
    res = lbfgs_minimize(objective, np.zeros(n_params), cfg.lbfgs, callback=record)
    if rotate:
        angles, _ = _squash_angles(res.x[:3], cfg.max_angle_deg)
        rot = _euler_matrices_deg(angles)[0]
        t = res.x[3:]
    else:
        rot = np.eye(3)
        t = res.x
    transform = _transform_about(rot, t, origin)
    deformed = apply_rigid(transform, source_mesh) if source_mesh is not None else None
    return RegistrationResult(
        method="rigid_pm" if rotate else "translation",
        final_state=transform,
        deformed_source=deformed,
        objective_trace=trace,
        converged=res.converged,
        reason=res.reason,
        wall_time_s=time.perf_counter() - start,
        stages=[{
            "kind": "rigid_pm" if rotate else "translation",
            "sigma_w": sigma_w,
            "iterations": res.n_iters,
            "evaluations": res.n_evals,
            "final_objective": res.value,
            "reason": res.reason,
        }],
        maps=[transform],
    )


def register_rigid_partial(source, target, cfg, source_mesh=None):
    """Rigid alignment of source elements onto target elements.

    Minimizes the partial dissimilarity over a rotation about the source
    barycenter (clamped to +-max_angle_deg per axis) plus a free
    translation, at the coarsest scale of the schedule.
    """
    return _run_rigid(source, target, cfg, rotate=True, source_mesh=source_mesh)


def register_translation_partial(source, target, cfg, source_mesh=None):
    """Translation-only alignment of source elements onto target elements."""
    return _run_rigid(source, target, cfg, rotate=False, source_mesh=source_mesh)


def _kabsch(moved, fixed):
    """Best proper rotation and translation mapping moved onto fixed.

    Falls back to a translation-only step when the cross-covariance is
    rank deficient.
    """
    cp = moved.mean(axis=0)
    cq = fixed.mean(axis=0)
    h = (moved - cp).T @ (fixed - cq)
    u, s, vt = np.linalg.svd(h)
    scale = max(s[0], 1.0)
    if s[1] <= 1e-12 * scale:
        return np.eye(3), cq - cp
    d = np.sign(np.linalg.det(vt.T @ u.T))
    rot = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return rot, cq - rot @ cp


def register_icp_rigid(source, target, cfg=None, source_mesh=None, max_iters=200):
    """Iterative closest point rigid alignment on element centers.

    Alternates nearest-center correspondences with the closed-form best
    rigid fit, accepting a step only when the mean matched distance
    improves, so the recorded dissimilarity trace never increases.
    """
    start = time.perf_counter()
    del cfg
    pts = source.centers.copy()
    rot_total = np.eye(3)
    t_total = np.zeros(3)
    _, dist = nearest_center_matches(pts, target.centers)
    best = float(dist.mean())
    trace = [{
        "stage": 0, "sigma_w": None, "iter": 0, "total": best,
        "data": best, "energy": 0.0, "regularizer": 0.0,
    }]
    reason = "max_iterations"
    converged = False
    for it in range(1, max_iters + 1):
        idx, _ = nearest_center_matches(pts, target.centers)
        rot, t = _kabsch(pts, target.centers[idx])
        cand = pts @ rot.T + t
        _, dist = nearest_center_matches(cand, target.centers)
        val = float(dist.mean())
        if not val < best:
            reason = "fixed_point"
            converged = True
            break
        pts = cand
        rot_total = rot @ rot_total
        t_total = rot @ t_total + t
        trace.append({
            "stage": 0, "sigma_w": None, "iter": it, "total": val,
            "data": val, "energy": 0.0, "regularizer": 0.0,
        })
        if best - val <= 1e-15 * max(1.0, best):
            best = val
            reason = "fixed_point"
            converged = True
            break
        best = val
    transform = RigidTransform(matrix_to_euler_deg(rot_total), t_total)
    deformed = apply_rigid(transform, source_mesh) if source_mesh is not None else None
    return RegistrationResult(
        method="icp_rigid",
        final_state=transform,
        deformed_source=deformed,
        objective_trace=trace,
        converged=converged,
        reason=reason,
        wall_time_s=time.perf_counter() - start,
        stages=[{
            "kind": "icp_rigid",
            "iterations": len(trace) - 1,
            "final_objective": best,
            "reason": reason,
        }],
        maps=[transform],
    )


def _lddmm_objective_factory(source_mesh, reference, target, cfg, sigma_w, kernel):
    """Builds the shooting objective at one spatial scale.

    The returned callable maps flattened initial momenta to (value,
    gradient); the companion cache maps an iterate's raw bytes to its
    (total, data, energy, regularizer) decomposition for trace logging.
    """
    vk = cfg.kernel_config(sigma_w)
    q0 = source_mesh.vertices
    n_verts = len(q0)
    lam1, lam2 = cfg.lambda1, cfg.lambda2
    weighted = cfg.weighted_quadrature
    cache = {}

    def objective(x):
        p0 = x.reshape(n_verts, 3)
        state = ShootingState(q0, p0)
        energy = path_energy(state, kernel)
        try:
            traj = shoot(state, kernel, cfg.n_steps)
            moved = source_mesh.with_vertices(traj.final.control_points)
            elems = face_elements(moved)
        except (DivergenceError, DegenerateElementError):
            return np.inf, np.zeros_like(x)
        data, gx, gd, gw = partial_dissimilarity_grad(
            elems, target, vk, weighted_quadrature=weighted
        )
        reg = 0.0
        if cfg.regularizer != "none" and lam2 > 0.0:
            reg_fn = (
                regularizer_local_grad
                if cfg.regularizer == "local"
                else regularizer_global_grad
            )
            reg, rgx, rgd, rgw = reg_fn(reference, elems, sigma_w)
            gx = gx + lam2 * rgx
            gd = gd + lam2 * rgd
            gw = gw + lam2 * rgw
        bar_q1 = vertex_gradients(moved, gx, gd, gw)
        _, bp0 = endpoint_adjoint(state, kernel, cfg.n_steps, bar_q1)
        grad = bp0 + 2.0 * lam1 * hamiltonian_momentum_grad(state, kernel)
        total = lam1 * energy + data + lam2 * reg
        cache[x.tobytes()] = {
            "total": total,
            "data": data,
            "energy": energy,
            "regularizer": reg,
        }
        if len(cache) > 128:
            cache.pop(next(iter(cache)))
        return total, grad.ravel()

    return objective, cache


def register_lddmm(source_mesh, target, cfg, reference=None, initial_momenta=None,
                   stage_offset=0):
    """Deformable alignment by geodesic shooting over the scale schedule.

    Control points are the source mesh vertices; each scale stage starts
    from the previous stage's momenta (zero at the first).  `reference`
    supplies the undeformed elements the mass regularizer compares
    against and defaults to the source mesh's own elements.
    """
    start = time.perf_counter()
    kernel = DeformationKernel(cfg.resolve_sigma0(target), cfg.scale_divisors)
    if reference is None:
        reference = face_elements(source_mesh)
    q0 = source_mesh.vertices
    p = (
        np.zeros_like(q0)
        if initial_momenta is None
        else np.array(initial_momenta, dtype=np.float64)
    )
    if p.shape != q0.shape:
        raise ValueError("initial momenta must match the source vertex array")
    trace = []
    stages = []
    converged = True
    reason = "gradient_tolerance"
    for si, sigma_w in enumerate(cfg.sigma_w_schedule):
        objective, cache = _lddmm_objective_factory(
            source_mesh, reference, target, cfg, sigma_w, kernel
        )

        def record(it, x, value, gnorm, _si=si, _sw=sigma_w):
            parts = cache.get(x.tobytes())
            if parts is None:
                objective(x)
                parts = cache[x.tobytes()]
            trace.append({
                "stage": stage_offset + _si,
                "sigma_w": _sw,
                "iter": it,
                **parts,
            })

        res = lbfgs_minimize(objective, p.ravel(), cfg.lbfgs, callback=record)
        p = res.x.reshape(q0.shape)
        converged = converged and res.converged
        reason = res.reason
        stages.append({
            "kind": "lddmm",
            "sigma_w": sigma_w,
            "iterations": res.n_iters,
            "evaluations": res.n_evals,
            "final_objective": res.value,
            "reason": res.reason,
        })
    state = ShootingState(q0, p)
    traj = shoot(state, kernel, cfg.n_steps)
    deformed = source_mesh.with_vertices(traj.final.control_points)
    return RegistrationResult(
        method="lddmm",
        final_state=state,
        deformed_source=deformed,
        objective_trace=trace,
        converged=converged,
        reason=reason,
        wall_time_s=time.perf_counter() - start,
        stages=stages,
        maps=[(traj, kernel)],
    )


def pipeline(method, source_mesh, target_mesh, cfg):
    """Chain registration stages for one of the named methods.

    Every method begins with the barycenter shift of the source onto the
    target.  `rigid_pm+lddmm` and `translation+lddmm` then run their
    rigid stage followed by geodesic shooting; the bare method names run
    the single corresponding stage.  The returned maps list applies left
    to right to transport ambient points.
    """
    if method not in PIPELINE_METHODS:
        raise ValueError(
            f"unknown method {method!r}; choose from {PIPELINE_METHODS}"
        )
    start = time.perf_counter()
    if cfg.sigma0 is None:
        cfg = replace(cfg, sigma0=0.5 * target_mesh.bounding_box_diagonal())
    target = face_elements(target_mesh)
    shift = RigidTransform.pure_translation(
        barycenter_translation(face_elements(source_mesh), target)
    )
    mesh = apply_rigid(shift, source_mesh)
    maps = [shift]
    stages = [{
        "kind": "barycenter",
        "translation": [float(v) for v in shift.translation],
    }]
    trace = []
    converged = True
    reason = "completed"

    rigid_kind = None
    if method in ("rigid_pm", "rigid_pm+lddmm"):
        rigid_kind = "rigid"
    elif method in ("translation", "translation+lddmm"):
        rigid_kind = "translation"

    if method == "icp_rigid":
        res = register_icp_rigid(
            face_elements(mesh), target, cfg, source_mesh=mesh
        )
    elif rigid_kind is not None:
        runner = (
            register_rigid_partial if rigid_kind == "rigid"
            else register_translation_partial
        )
        res = runner(face_elements(mesh), target, cfg, source_mesh=mesh)
    mesh = res.deformed_source
    maps += res.maps
    stages += res.stages
    trace += res.objective_trace
    converged = converged and res.converged
    reason = res.reason
    final_state = res.final_state

    if method.endswith("+lddmm"):
        res = register_lddmm(mesh, target, cfg, stage_offset=1)
        mesh = res.deformed_source
        maps += res.maps
        stages += res.stages
        trace += res.objective_trace
        converged = converged and res.converged
        reason = res.reason
        final_state = res.final_state

    return RegistrationResult(
        method=method,
        final_state=final_state,
        deformed_source=mesh,
        objective_trace=trace,
        converged=converged,
        reason=reason,
        wall_time_s=time.perf_counter() - start,
        stages=stages,
        maps=maps,
    )
