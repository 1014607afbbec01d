"""Oriented varifold kernels, dissimilarities and mass regularizers.

Shapes enter as DiscreteVarifold atoms (center, unit director, weight).
The product kernel pairs a Gaussian on centers with exp(<u, v>) on
directors; on top of it sit the symmetric kernel distance, an asymmetric
partial-matching dissimilarity that only charges unmatched source mass,
a nearest-neighbor baseline, and two regularizers that track how a
deformation redistributes kernel mass.

Gradient functions return partials with respect to the moving shape's
centers, directors (treated as unconstrained vectors) and weights; the
second shape is always held fixed.
"""

from dataclasses import dataclass

import numpy as np

from ._threads import row_blocks, run_blocks

# denominators below this are clamped before forming representer ratios
RATIO_FLOOR = 1e-30


class DegenerateTargetError(ValueError):
    """Target representer values are not strictly positive."""


_ratio_floor_hits = 0


def ratio_floor_count():
    """How many representer ratios were clamped at the floor so far."""
    return _ratio_floor_hits


def reset_ratio_floor_count():
    global _ratio_floor_hits
    _ratio_floor_hits = 0


@dataclass(frozen=True)
class VarifoldKernelConfig:
    """Kernel width sigma_w (mm) and smooth-min epsilon."""

    sigma_w: float
    epsilon: float = 1e-6

    def __post_init__(self):
        if not (np.isfinite(self.sigma_w) and self.sigma_w > 0):
            raise ValueError("sigma_w must be positive and finite")
        if not (0 < self.epsilon <= 1e-2):
            raise ValueError("epsilon must lie in (0, 1e-2]")


def spatial_kernel(x, y, sigma_w):
    """Gaussian position kernel exp(-|x-y|^2 / sigma_w^2)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    d2 = np.square(x - y).sum(axis=-1)
    return np.exp(-d2 / (sigma_w * sigma_w))


def orientation_kernel(u, v):
    """Director kernel exp(<u, v>); range [1/e, e] on unit vectors."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    return np.exp((u * v).sum(axis=-1))


def _pair_block(xc, xd, yc, yd, sigma):
    """Dense product-kernel block exp(<u,v> - |x-y|^2/sigma^2)."""
    d2 = np.square(xc[:, None, :] - yc[None, :, :]).sum(axis=-1)
    return np.exp(xd @ yd.T - d2 / (sigma * sigma))


def _check_dims(a, b):
    if a.dim != b.dim:
        raise ValueError(f"shapes live in different dimensions ({a.dim} vs {b.dim})")


def representer_values(at, of, sigma_w):
    """Kernel field of `of` sampled at the elements of `at`.

    Entry i is w_at_i * sum_j k(at_i, of_j) w_of_j; with at == of this is
    each element's share of the squared kernel norm.
    """
    _check_dims(at, of)
    n, m = at.n, of.n
    out = np.empty(n)

    def fill(i0, i1):
        k = _pair_block(at.centers[i0:i1], at.directors[i0:i1], of.centers, of.directors,
                        sigma_w)
        out[i0:i1] = at.weights[i0:i1] * (k @ of.weights)

    run_blocks(fill, row_blocks(n, m))
    return out


def inner_product(s, t, sigma_w):
    """Kernel inner product sum_ij k(s_i, t_j) w_i w_j."""
    _check_dims(s, t)
    out = np.empty(s.n)

    def fill(i0, i1):
        k = _pair_block(s.centers[i0:i1], s.directors[i0:i1], t.centers, t.directors,
                        sigma_w)
        out[i0:i1] = k @ t.weights

    run_blocks(fill, row_blocks(s.n, t.n))
    return float(s.weights @ out)


def distance_sq(s, t, sigma_w):
    """Squared kernel distance |mu_S - mu_T|^2."""
    return (
        inner_product(s, s, sigma_w)
        - 2.0 * inner_product(s, t, sigma_w)
        + inner_product(t, t, sigma_w)
    )


def smooth_min_one(s, epsilon):
    """Smooth version of min(1, s): (s + 1 - sqrt(eps + (s-1)^2)) / 2.

    Strictly below min(1, s) for eps > 0 and equal to it at eps = 0.
    """
    s = np.asarray(s, dtype=np.float64)
    return 0.5 * (s + 1.0 - np.sqrt(epsilon + np.square(s - 1.0)))


def _smooth_min_one_deriv(s, epsilon):
    s = np.asarray(s, dtype=np.float64)
    return 0.5 * (1.0 - (s - 1.0) / np.sqrt(epsilon + np.square(s - 1.0)))


def hinge_sq(s):
    """One-sided quadratic max(0, s)^2."""
    s = np.asarray(s, dtype=np.float64)
    return np.square(np.maximum(s, 0.0))


def _target_representer(t, sigma_w):
    """Self representer of the target, floored for ratio safety."""
    global _ratio_floor_hits
    b = representer_values(t, t, sigma_w)
    if b.min() <= 0.0:
        bad = int(np.argmin(b))
        raise DegenerateTargetError(
            f"target representer value {b[bad]:.3e} at element {bad} is not positive"
        )
    clipped = b < RATIO_FLOOR
    if clipped.any():
        _ratio_floor_hits += int(clipped.sum())
        b = np.maximum(b, RATIO_FLOOR)
    return b


def partial_dissimilarity(s, t, cfg, weighted_quadrature=False):
    """Asymmetric partial-matching dissimilarity from s toward t.

    Charges hinge-squared source mass left uncovered by the target:

        sum_i g( omega_s(i) - sum_l min_eps(1, omega_s(i)/omega_t(l)) k(i, l) )

    with the bare product kernel in the coverage sum.  The value is zero
    when every source element is fully covered and grows as coverage is
    lost; it is not symmetric in its arguments.  With
    weighted_quadrature=True the coverage sum carries the target weights
    and the hinge is integrated against the source weights.
    """
    value, _ = _partial_core(s, t, cfg, weighted_quadrature, want_grad=False)
    return value


def partial_dissimilarity_grad(s, t, cfg, weighted_quadrature=False):
    """Value and gradients of partial_dissimilarity w.r.t. s.

    Returns (value, d_centers, d_directors, d_weights).
    """
    return _partial_core(s, t, cfg, weighted_quadrature, want_grad=True)


def _partial_core(s, t, cfg, weighted, want_grad):
    _check_dims(s, t)
    if s.n == 0 or t.n == 0:
        raise ValueError("partial_dissimilarity requires nonempty shapes")
    sigma, eps = cfg.sigma_w, cfg.epsilon
    a = representer_values(s, s, sigma)
    b = _target_representer(t, sigma)

    n, m = s.n, t.n
    xc, xd, w = s.centers, s.directors, s.weights
    yc, yd, u = t.centers, t.directors, t.weights
    inv_s2 = 2.0 / (sigma * sigma)

    f = np.empty(n)
    big_g = np.empty(n)  # d(value)/d(f_i)
    p = np.empty(n)      # d(f_i)/d(a_i)
    gx = np.empty_like(xc) if want_grad else None
    gd = np.empty_like(xd) if want_grad else None

    def fill(i0, i1):
        kap = _pair_block(xc[i0:i1], xd[i0:i1], yc, yd, sigma)
        if weighted:
            kap = kap * u[None, :]
        ratio = a[i0:i1, None] / b[None, :]
        mins = smooth_min_one(ratio, eps)
        cover = (mins * kap).sum(axis=1)
        f[i0:i1] = a[i0:i1] - cover
        p[i0:i1] = 1.0 - ((_smooth_min_one_deriv(ratio, eps) / b[None, :]) * kap).sum(axis=1)
        gblk = 2.0 * np.maximum(f[i0:i1], 0.0)
        if weighted:
            gblk = gblk * w[i0:i1]
        big_g[i0:i1] = gblk
        if want_grad:
            t1 = mins * kap
            gx[i0:i1] = inv_s2 * gblk[:, None] * (
                t1.sum(axis=1)[:, None] * xc[i0:i1] - t1 @ yc
            )
            gd[i0:i1] = -gblk[:, None] * (t1 @ yd)

    run_blocks(fill, row_blocks(n, m))

    hinges = hinge_sq(f)
    value = float((w * hinges).sum()) if weighted else float(hinges.sum())
    if not want_grad:
        return value, None

    ax, ad, aw = _self_channel_grads(s, big_g * p, sigma)
    gx += ax
    gd += ad
    gw = aw
    if weighted:
        gw = gw + hinges
    return value, gx, gd, gw


def _self_channel_grads(elems, coeff, sigma):
    """Gradients of sum_i coeff_i * a_i for the self representer a.

    a_i = w_i sum_j k_ij w_j couples every pair, so each element picks up
    contributions both as the evaluation point and as a summand.
    """
    xc, xd, w = elems.centers, elems.directors, elems.weights
    n = elems.n
    inv_s2 = 2.0 / (sigma * sigma)
    cw = coeff * w
    gx = np.empty_like(xc)
    gd = np.empty_like(xd)
    gw = np.empty(n)

    def fill(i0, i1):
        k = _pair_block(xc[i0:i1], xd[i0:i1], xc, xd, sigma)
        r = k @ w
        pair = k * (w[i0:i1, None] * w[None, :]) * (coeff[i0:i1, None] + coeff[None, :])
        gx[i0:i1] = inv_s2 * (pair @ xc - pair.sum(axis=1)[:, None] * xc[i0:i1])
        gd[i0:i1] = pair @ xd
        gw[i0:i1] = coeff[i0:i1] * r + k @ cw

    run_blocks(fill, row_blocks(n, n))
    return gx, gd, gw


def icp_dissimilarity(s, t):
    """Mean distance from each source center to its nearest target center."""
    _check_dims(s, t)
    if s.n == 0 or t.n == 0:
        raise ValueError("icp_dissimilarity requires nonempty shapes")
    _, dist = nearest_center_matches(s.centers, t.centers)
    return float(dist.mean())


def nearest_center_matches(points, targets):
    """Exhaustive nearest neighbors; ties resolve to the lowest index."""
    n = len(points)
    idx = np.empty(n, dtype=np.int64)
    dist = np.empty(n)

    def fill(i0, i1):
        d2 = np.square(points[i0:i1, None, :] - targets[None, :, :]).sum(axis=-1)
        j = d2.argmin(axis=1)
        idx[i0:i1] = j
        dist[i0:i1] = np.sqrt(d2[np.arange(i1 - i0), j])

    run_blocks(fill, row_blocks(n, len(targets)))
    return idx, dist


def _check_pairing(s, s_def, op):
    _check_dims(s, s_def)
    if s.n != s_def.n:
        raise ValueError(f"{op} needs matching element counts ({s.n} vs {s_def.n})")
    if s.n == 0:
        raise ValueError(f"{op} requires nonempty shapes")
    if s.weights.min() <= 0.0:
        raise ValueError(f"{op} requires positive source weights")


def regularizer_global(s, s_def, sigma_w):
    """Squared change of total kernel mass under the deformation."""
    _check_pairing(s, s_def, "regularizer_global")
    total_s = representer_values(s, s, sigma_w).sum()
    total_d = representer_values(s_def, s_def, sigma_w).sum()
    return float((total_s - total_d) ** 2)


def regularizer_global_grad(s, s_def, sigma_w):
    """Value and gradients of regularizer_global w.r.t. s_def."""
    _check_pairing(s, s_def, "regularizer_global")
    total_s = representer_values(s, s, sigma_w).sum()
    total_d = representer_values(s_def, s_def, sigma_w).sum()
    gap = total_s - total_d
    coeff = np.full(s_def.n, -2.0 * gap)
    gx, gd, gw = _self_channel_grads(s_def, coeff, sigma_w)
    return float(gap * gap), gx, gd, gw


def regularizer_local(s, s_def, sigma_w):
    """Per-element kernel-mass drift, rescaled by the area change."""
    _check_pairing(s, s_def, "regularizer_local")
    a_s = representer_values(s, s, sigma_w)
    a_d = representer_values(s_def, s_def, sigma_w)
    drift = a_s - a_d * (s_def.weights / s.weights)
    return float(np.square(drift).sum())


def regularizer_local_grad(s, s_def, sigma_w):
    """Value and gradients of regularizer_local w.r.t. s_def."""
    _check_pairing(s, s_def, "regularizer_local")
    a_s = representer_values(s, s, sigma_w)
    a_d = representer_values(s_def, s_def, sigma_w)
    scale = s_def.weights / s.weights
    drift = a_s - a_d * scale
    gx, gd, gw = _self_channel_grads(s_def, -2.0 * drift * scale, sigma_w)
    gw = gw - 2.0 * drift * a_d / s.weights
    return float(np.square(drift).sum()), gx, gd, gw
