"""Geodesic flows of a multi-scale Gaussian kernel metric.

Control points q and momenta p evolve under the kernel Hamiltonian
H(q, p) = 0.5 sum_ij <p_i, p_j> K(q_i, q_j) with a fixed fourth-order
Runge-Kutta discretization.  Passive points (mesh vertices, landmarks,
grid nodes) are advected by re-integrating the joint system with the
same scheme and step count, so a passive point seeded on a control
point reproduces its trajectory.  endpoint_adjoint pulls endpoint
cotangents back through the exact arithmetic of the integrator, giving
machine-accurate objective gradients.
"""

import json
import warnings
from dataclasses import dataclass

import numpy as np

from .geometry import DEGENERATE_AREA, Mesh


class DivergenceError(RuntimeError):
    """Integration produced non-finite state."""

    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"flow diverged at step {step}")


@dataclass(frozen=True)
class DeformationKernel:
    """Sum of Gaussians at widths sigma0 / divisor, divisor in scale_divisors."""

    sigma0: float
    scale_divisors: tuple = (1.0, 4.0, 8.0, 16.0)

    def __post_init__(self):
        if not (np.isfinite(self.sigma0) and self.sigma0 > 0):
            raise ValueError("sigma0 must be positive and finite")
        divisors = tuple(float(d) for d in self.scale_divisors)
        if not divisors or any(d <= 0 for d in divisors):
            raise ValueError("scale divisors must be positive")
        if len(set(divisors)) != len(divisors):
            raise ValueError("scale divisors must be distinct")
        object.__setattr__(self, "scale_divisors", divisors)

    def sigmas(self):
        return np.array([self.sigma0 / d for d in self.scale_divisors])


@dataclass(frozen=True)
class ShootingState:
    """Control points and momenta, both (n, 3)."""

    control_points: np.ndarray
    momenta: np.ndarray

    def __post_init__(self):
        q = np.array(self.control_points, dtype=np.float64)
        p = np.array(self.momenta, dtype=np.float64)
        if q.ndim != 2 or q.shape[1] != 3 or p.shape != q.shape:
            raise ValueError("control points and momenta must both be (n, 3)")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
            raise ValueError("shooting state contains non-finite values")
        q.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "control_points", q)
        object.__setattr__(self, "momenta", p)


@dataclass(frozen=True)
class FlowTrajectory:
    """States at the n_steps + 1 knots of the unit time interval."""

    states: tuple
    n_steps: int

    @property
    def initial(self):
        return self.states[0]

    @property
    def final(self):
        return self.states[-1]


def kv_scalar(x, y, kernel):
    """Flow kernel value sum_s exp(-|x-y|^2 / sigma_s^2)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    d2 = np.square(x - y).sum(axis=-1)
    sig = kernel.sigmas()
    return np.exp(-d2[..., None] / np.square(sig)).sum(axis=-1)


def _kv_matrices(qa, qb, kernel, orders=1):
    """Pairwise kernel sums and radial derivative weights.

    Returns (k, g[, h]) with k_ij = sum_s e_s, g_ij = sum_s 2 e_s/sigma_s^2
    and h_ij = sum_s 4 e_s/sigma_s^4, where e_s is the Gaussian at scale s.
    grad_x k(x, y) = -g (x - y); grad of g brings in h.
    """
    d2 = np.square(qa[:, None, :] - qb[None, :, :]).sum(axis=-1)
    k = np.zeros_like(d2)
    g = np.zeros_like(d2)
    h = np.zeros_like(d2) if orders >= 2 else None
    for s in kernel.sigmas():
        e = np.exp(-d2 / (s * s))
        k += e
        g += (2.0 / (s * s)) * e
        if orders >= 2:
            h += (4.0 / (s ** 4)) * e
    return (k, g, h) if orders >= 2 else (k, g)


def hamiltonian(state, kernel):
    """Kinetic energy 0.5 sum_ij <p_i, p_j> K(q_i, q_j)."""
    q, p = state.control_points, state.momenta
    k, _ = _kv_matrices(q, q, kernel, orders=1)
    return float(0.5 * np.sum((p @ p.T) * k))


def path_energy(initial, kernel):
    """Geodesic path energy; twice the (conserved) Hamiltonian."""
    return 2.0 * hamiltonian(initial, kernel)


def _rhs(q, p, kernel):
    """Hamiltonian vector field (dq/dt, dp/dt)."""
    k, g = _kv_matrices(q, q, kernel, orders=1)
    dq = k @ p
    c = (p @ p.T) * g
    dp = c.sum(axis=1)[:, None] * q - c @ q
    return dq, dp


def _rhs_vjp(q, p, aq, ap, kernel):
    """Pull (aq, ap) back through the Jacobian of _rhs at (q, p).

    Computes the gradients of <aq, dq/dt> + <ap, dp/dt> with respect to
    q and p, with the adjoint vectors held fixed.
    """
    k, g, h = _kv_matrices(q, q, kernel, orders=2)
    r = q[:, None, :] - q[None, :, :]
    c = p @ p.T
    aqp = aq @ p.T                              # <aq_i, p_j>
    apr = np.einsum("ik,ijk->ij", ap, r)        # <ap_i, r_ij>

    w1 = aqp * g
    vq = -np.einsum("ij,ijk->ik", w1, r) + np.einsum("ij,ijk->jk", w1, r)

    w2 = c * h * apr
    cg = c * g
    vq += -np.einsum("ij,ijk->ik", w2, r) + cg.sum(axis=1)[:, None] * ap
    vq += np.einsum("ij,ijk->jk", w2, r) - cg.T @ ap

    gapr = g * apr
    vp = k @ aq + gapr @ p + gapr.T @ p
    return vq, vp


def shoot(initial, kernel, n_steps=10):
    """Integrate the Hamiltonian flow over unit time with RK4.

    Returns a FlowTrajectory holding the n_steps + 1 knot states.
    Raises DivergenceError if the state leaves the finite range.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    dt = 1.0 / n_steps
    q = initial.control_points.copy()
    p = initial.momenta.copy()
    states = [ShootingState(q, p)]
    for step in range(n_steps):
        q, p = _rk4_step(q, p, dt, kernel)
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
            raise DivergenceError(step + 1)
        states.append(ShootingState(q, p))
    return FlowTrajectory(tuple(states), n_steps)


def _rk4_step(q, p, dt, kernel):
    k1q, k1p = _rhs(q, p, kernel)
    k2q, k2p = _rhs(q + 0.5 * dt * k1q, p + 0.5 * dt * k1p, kernel)
    k3q, k3p = _rhs(q + 0.5 * dt * k2q, p + 0.5 * dt * k2p, kernel)
    k4q, k4p = _rhs(q + dt * k3q, p + dt * k3p, kernel)
    qn = q + (dt / 6.0) * (k1q + 2.0 * k2q + 2.0 * k3q + k4q)
    pn = p + (dt / 6.0) * (k1p + 2.0 * k2p + 2.0 * k3p + k4p)
    return qn, pn


def _passive_velocity(x, q, p, kernel):
    d2 = np.square(x[:, None, :] - q[None, :, :]).sum(axis=-1)
    k = np.zeros_like(d2)
    for s in kernel.sigmas():
        k += np.exp(-d2 / (s * s))
    return k @ p


def flow_points(trajectory, points, kernel):
    """Advect passive points through the flow.

    The joint (q, p, x) system is re-integrated with the same RK4 scheme
    and step count used to produce the trajectory, so control points fed
    back in follow their own trajectory.
    """
    x = np.asarray(points, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != 3:
        raise ValueError("points must be (n, 3)")
    dt = 1.0 / trajectory.n_steps
    q = trajectory.initial.control_points.copy()
    p = trajectory.initial.momenta.copy()
    x = x.copy()
    for step in range(trajectory.n_steps):
        k1q, k1p = _rhs(q, p, kernel)
        k1x = _passive_velocity(x, q, p, kernel)
        k2q, k2p = _rhs(q + 0.5 * dt * k1q, p + 0.5 * dt * k1p, kernel)
        k2x = _passive_velocity(x + 0.5 * dt * k1x, q + 0.5 * dt * k1q,
                                p + 0.5 * dt * k1p, kernel)
        k3q, k3p = _rhs(q + 0.5 * dt * k2q, p + 0.5 * dt * k2p, kernel)
        k3x = _passive_velocity(x + 0.5 * dt * k2x, q + 0.5 * dt * k2q,
                                p + 0.5 * dt * k2p, kernel)
        k4q, k4p = _rhs(q + dt * k3q, p + dt * k3p, kernel)
        k4x = _passive_velocity(x + dt * k3x, q + dt * k3q, p + dt * k3p, kernel)
        x = x + (dt / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
        q = q + (dt / 6.0) * (k1q + 2.0 * k2q + 2.0 * k3q + k4q)
        p = p + (dt / 6.0) * (k1p + 2.0 * k2p + 2.0 * k3p + k4p)
        if not np.all(np.isfinite(x)):
            raise DivergenceError(step + 1, "passive point flow diverged")
    return x[0] if single else x


def endpoint_adjoint(initial, kernel, n_steps, bar_q1, bar_p1=None):
    """Gradient of an endpoint functional with respect to (q0, p0).

    Given the partials (bar_q1, bar_p1) of a scalar with respect to the
    final state of shoot(initial, kernel, n_steps), replays the forward
    RK4 pass and runs its exact reverse-mode transpose.  Returns
    (bar_q0, bar_p0).
    """
    dt = 1.0 / n_steps
    q = initial.control_points.copy()
    p = initial.momenta.copy()
    stages = []
    for _ in range(n_steps):
        u1 = (q, p)
        k1 = _rhs(*u1, kernel)
        u2 = (q + 0.5 * dt * k1[0], p + 0.5 * dt * k1[1])
        k2 = _rhs(*u2, kernel)
        u3 = (q + 0.5 * dt * k2[0], p + 0.5 * dt * k2[1])
        k3 = _rhs(*u3, kernel)
        u4 = (q + dt * k3[0], p + dt * k3[1])
        k4 = _rhs(*u4, kernel)
        stages.append((u1, u2, u3, u4))
        q = q + (dt / 6.0) * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
        p = p + (dt / 6.0) * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])

    bq = np.array(bar_q1, dtype=np.float64)
    bp = (np.zeros_like(bq) if bar_p1 is None else np.array(bar_p1, dtype=np.float64))
    for u1, u2, u3, u4 in reversed(stages):
        bk4 = (dt / 6.0) * bq, (dt / 6.0) * bp
        bk3 = (dt / 3.0) * bq, (dt / 3.0) * bp
        bk2 = (dt / 3.0) * bq, (dt / 3.0) * bp
        bk1 = (dt / 6.0) * bq, (dt / 6.0) * bp

        v4 = _rhs_vjp(u4[0], u4[1], bk4[0], bk4[1], kernel)
        bk3 = bk3[0] + dt * v4[0], bk3[1] + dt * v4[1]
        v3 = _rhs_vjp(u3[0], u3[1], bk3[0], bk3[1], kernel)
        bk2 = bk2[0] + 0.5 * dt * v3[0], bk2[1] + 0.5 * dt * v3[1]
        v2 = _rhs_vjp(u2[0], u2[1], bk2[0], bk2[1], kernel)
        bk1 = bk1[0] + 0.5 * dt * v2[0], bk1[1] + 0.5 * dt * v2[1]
        v1 = _rhs_vjp(u1[0], u1[1], bk1[0], bk1[1], kernel)

        bq = bq + v1[0] + v2[0] + v3[0] + v4[0]
        bp = bp + v1[1] + v2[1] + v3[1] + v4[1]
    return bq, bp


def hamiltonian_momentum_grad(state, kernel):
    """dH/dp at the given state: (K(q_i, q_j) p_j) rows."""
    q, p = state.control_points, state.momenta
    k, _ = _kv_matrices(q, q, kernel, orders=1)
    return k @ p


def deform_mesh(trajectory, mesh, kernel):
    """Advect mesh vertices through the flow; connectivity is kept.

    Warns (without raising) if the deformation degenerates faces.
    """
    new_vertices = flow_points(trajectory, mesh.vertices, kernel)
    out = Mesh(new_vertices, mesh.faces)
    v1 = new_vertices[mesh.faces[:, 0]]
    v2 = new_vertices[mesh.faces[:, 1]]
    v3 = new_vertices[mesh.faces[:, 2]]
    areas = np.linalg.norm(0.5 * np.cross(v2 - v1, v3 - v1), axis=1)
    if areas.size and areas.min() < DEGENERATE_AREA:
        warnings.warn(
            f"deformation degenerated {int((areas < DEGENERATE_AREA).sum())} face(s)",
            RuntimeWarning,
            stacklevel=2,
        )
    return out


MAX_GRID_NODES = 1 << 24


def grid_nodes(origin, spacing, shape):
    """Grid node coordinates in x-fastest order, (nx*ny*nz, 3)."""
    origin = np.asarray(origin, dtype=np.float64)
    spacing = np.asarray(spacing, dtype=np.float64)
    nx, ny, nz = (int(v) for v in shape)
    if origin.shape != (3,) or spacing.shape != (3,):
        raise ValueError("origin and spacing must be 3-vectors")
    if min(nx, ny, nz) < 1:
        raise ValueError("grid shape must be positive")
    if spacing.min() <= 0:
        raise ValueError("grid spacing must be positive")
    n = nx * ny * nz
    if n > MAX_GRID_NODES:
        raise ValueError(f"grid of {n} nodes exceeds the {MAX_GRID_NODES} node cap")
    ix = np.arange(nx)
    iy = np.arange(ny)
    iz = np.arange(nz)
    gz, gy, gx = np.meshgrid(iz, iy, ix, indexing="ij")
    idx = np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()]).astype(np.float64)
    return origin + idx * spacing


def deform_grid(trajectory, kernel, origin, spacing, shape):
    """Displacement field of a regular grid under the flow.

    Returns (nx*ny*nz, 3) displacements, x index fastest.
    """
    nodes = grid_nodes(origin, spacing, shape)
    return flow_points(trajectory, nodes, kernel) - nodes


def write_displacement_field(path, displacement, origin, spacing, shape):
    """Write raw little-endian float64 triples plus a JSON sidecar.

    The sidecar (path + '.json') records origin, spacing, shape and the
    x-fastest node order.
    """
    disp = np.ascontiguousarray(displacement, dtype="<f8")
    n = int(np.prod([int(v) for v in shape]))
    if disp.shape != (n, 3):
        raise ValueError(f"displacement must be ({n}, 3) for shape {tuple(shape)}")
    with open(path, "wb") as fh:
        fh.write(disp.tobytes(order="C"))
    sidecar = {
        "dtype": "float64",
        "byte_order": "little",
        "components_per_node": 3,
        "node_order": "x-fastest",
        "origin": [float(v) for v in origin],
        "spacing": [float(v) for v in spacing],
        "shape": [int(v) for v in shape],
    }
    with open(str(path) + ".json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_displacement_field(path):
    """Read a displacement field written by write_displacement_field."""
    with open(str(path) + ".json", "r", encoding="utf-8") as fh:
        sidecar = json.load(fh)
    n = int(np.prod(sidecar["shape"]))
    data = np.fromfile(path, dtype="<f8").reshape(n, 3)
    return data, sidecar
