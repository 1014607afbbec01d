"""Limited-memory BFGS with a strong Wolfe line search.

The objective callable returns (value, gradient) in one evaluation.
Accepted steps satisfy the strong Wolfe conditions (sufficient decrease
plus curvature), so the per-iteration objective trace is non-increasing.
On line-search failure the best iterate found so far is returned along
with the reason.  No randomness anywhere: reruns are bit-identical.
"""

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class LbfgsOptions:
    max_iters: int = 500
    memory: int = 10
    grad_tol: float = 1e-6       # relative to the initial gradient norm
    grad_tol_abs: float = 1e-30  # flat-gradient floor
    wolfe_c1: float = 1e-4
    wolfe_c2: float = 0.9
    max_line_evals: int = 25

    def __post_init__(self):
        if self.max_iters < 0 or self.memory < 1:
            raise ValueError("max_iters must be >= 0 and memory >= 1")
        if not (0 < self.wolfe_c1 < self.wolfe_c2 < 1):
            raise ValueError("need 0 < c1 < c2 < 1")


@dataclass
class LbfgsResult:
    x: np.ndarray
    value: float
    gradient: np.ndarray
    n_iters: int
    n_evals: int
    converged: bool
    reason: str
    trace: list = field(default_factory=list)


def lbfgs_minimize(objective, x0, options=None, callback=None):
    """Minimize objective(x) -> (value, grad) from x0.

    callback, if given, is invoked after every accepted iterate as
    callback(iteration, x, value, grad_norm).
    """
    opts = options or LbfgsOptions()
    x = np.array(x0, dtype=np.float64).ravel()
    evals = [0]

    def evaluate(z):
        evals[0] += 1
        f, g = objective(z)
        return float(f), np.asarray(g, dtype=np.float64).ravel()

    f, g = evaluate(x)
    gnorm0 = float(np.linalg.norm(g))
    tol = max(opts.grad_tol * gnorm0, opts.grad_tol_abs)
    trace = [(0, f, gnorm0)]
    if callback is not None:
        callback(0, x, f, gnorm0)

    best = (x.copy(), f, g.copy())
    if gnorm0 <= tol:
        return LbfgsResult(x, f, g, 0, evals[0], True, "gradient_tolerance", trace)

    s_mem, y_mem, rho_mem = [], [], []
    for it in range(1, opts.max_iters + 1):
        d = _two_loop_direction(g, s_mem, y_mem, rho_mem)
        dg = float(d @ g)
        if not np.isfinite(dg) or dg >= 0.0:
            # fall back to steepest descent if curvature info went bad
            d = -g
            dg = float(d @ g)
            s_mem, y_mem, rho_mem = [], [], []

        alpha, f_new, g_new, ok = _strong_wolfe(evaluate, x, f, g, d, dg, opts)
        if not ok:
            reason = "line_search_failure"
            bx, bf, bg = best
            return LbfgsResult(bx, bf, bg, it - 1, evals[0], False, reason, trace)

        x_new = x + alpha * d
        s = x_new - x
        yv = g_new - g
        sy = float(s @ yv)
        if sy > 1e-10 * float(np.linalg.norm(s)) * float(np.linalg.norm(yv)):
            s_mem.append(s)
            y_mem.append(yv)
            rho_mem.append(1.0 / sy)
            if len(s_mem) > opts.memory:
                s_mem.pop(0)
                y_mem.pop(0)
                rho_mem.pop(0)

        x, f, g = x_new, f_new, g_new
        if f < best[1]:
            best = (x.copy(), f, g.copy())
        gnorm = float(np.linalg.norm(g))
        trace.append((it, f, gnorm))
        if callback is not None:
            callback(it, x, f, gnorm)
        if gnorm <= tol:
            return LbfgsResult(x, f, g, it, evals[0], True, "gradient_tolerance", trace)

    return LbfgsResult(x, f, g, opts.max_iters, evals[0], False, "max_iterations", trace)


def _two_loop_direction(g, s_mem, y_mem, rho_mem):
    q = -g.copy()
    if not s_mem:
        return q
    alphas = []
    for s, y, rho in zip(reversed(s_mem), reversed(y_mem), reversed(rho_mem)):
        a = rho * float(s @ q)
        alphas.append(a)
        q -= a * y
    gamma = float(s_mem[-1] @ y_mem[-1]) / float(y_mem[-1] @ y_mem[-1])
    q *= gamma
    for (s, y, rho), a in zip(zip(s_mem, y_mem, rho_mem), reversed(alphas)):
        b = rho * float(y @ q)
        q += (a - b) * s
    return q


def _strong_wolfe(evaluate, x, f0, g0, d, dg0, opts):
    """Line search enforcing f decrease and |slope| reduction.

    Bracketing phase expands the trial step until the minimizer is
    bracketed, then the zoom phase bisects with quadratic interpolation.
    Returns (alpha, f, g, success) where (f, g) belong to the evaluation
    at the returned alpha.
    """
    c1, c2 = opts.wolfe_c1, opts.wolfe_c2
    alpha_prev, f_prev, slope_prev = 0.0, f0, dg0
    alpha = 1.0
    f_a = f0
    g_a = g0
    for i in range(opts.max_line_evals):
        f_a, g_a = evaluate(x + alpha * d)
        slope = float(g_a @ d) if np.all(np.isfinite(g_a)) else np.nan
        if not np.isfinite(f_a) or not np.isfinite(slope):
            # retreat into the finite region and zoom there
            return _zoom(evaluate, x, f0, dg0, d, alpha_prev, f_prev, slope_prev,
                         alpha, np.inf, np.nan, opts)
        if f_a > f0 + c1 * alpha * dg0 or (i > 0 and f_a >= f_prev):
            return _zoom(evaluate, x, f0, dg0, d, alpha_prev, f_prev, slope_prev,
                         alpha, f_a, slope, opts)
        if abs(slope) <= -c2 * dg0:
            return alpha, f_a, g_a, True
        if slope >= 0.0:
            return _zoom(evaluate, x, f0, dg0, d, alpha, f_a, slope,
                         alpha_prev, f_prev, slope_prev, opts)
        alpha_prev, f_prev, slope_prev = alpha, f_a, slope
        alpha *= 2.0
    return alpha, f_a, g_a, False


def _interp_quadratic(a_lo, f_lo, slope_lo, a_hi, f_hi):
    """Minimizer of the quadratic matching f_lo, slope_lo at a_lo and f_hi."""
    da = a_hi - a_lo
    denom = f_hi - f_lo - slope_lo * da
    if denom <= 0 or not np.isfinite(denom):
        return a_lo + 0.5 * da
    step = -slope_lo * da * da / (2.0 * denom)
    return a_lo + step


def _zoom(evaluate, x, f0, dg0, d, a_lo, f_lo, slope_lo, a_hi, f_hi, slope_hi, opts):
    c1, c2 = opts.wolfe_c1, opts.wolfe_c2
    f_j, g_j, a_j = f_lo, None, a_lo
    for _ in range(opts.max_line_evals):
        a_j = _interp_quadratic(a_lo, f_lo, slope_lo, a_hi, f_hi)
        lo, hi = (a_lo, a_hi) if a_lo < a_hi else (a_hi, a_lo)
        span = hi - lo
        if not np.isfinite(a_j) or a_j <= lo + 0.05 * span or a_j >= hi - 0.05 * span:
            a_j = lo + 0.5 * span
        if span < 1e-16 * max(1.0, abs(a_lo)):
            break
        f_j, g_j = evaluate(x + a_j * d)
        slope_j = float(g_j @ d) if np.all(np.isfinite(g_j)) else np.nan
        if not np.isfinite(f_j) or not np.isfinite(slope_j):
            a_hi, f_hi, slope_hi = a_j, np.inf, np.nan
            continue
        if f_j > f0 + c1 * a_j * dg0 or f_j >= f_lo:
            a_hi, f_hi, slope_hi = a_j, f_j, slope_j
        else:
            if abs(slope_j) <= -c2 * dg0:
                return a_j, f_j, g_j, True
            if slope_j * (a_hi - a_lo) >= 0.0:
                a_hi, f_hi, slope_hi = a_lo, f_lo, slope_lo
            a_lo, f_lo, slope_lo = a_j, f_j, slope_j
    if g_j is not None and np.isfinite(f_j) and f_j < f0:
        # Wolfe failed but we still hold a descent point: hand it back as
        # a failed search so the driver returns best-so-far consistently.
        return a_j, f_j, g_j, False
    return a_j, f_j if g_j is not None else f0, g_j, False


def gradient_check(objective, x, step=1e-5, tolerance=1e-5):
    """Compare the analytic gradient against central differences.

    Returns a dict with the worst relative error, its index, the two
    gradients and a passed flag.  The step is scaled per coordinate by
    max(1, |x_i|).
    """
    x = np.array(x, dtype=np.float64).ravel()
    _, g = objective(x)
    g = np.asarray(g, dtype=np.float64).ravel()
    fd = np.empty_like(g)
    for i in range(len(x)):
        h = step * max(1.0, abs(x[i]))
        xp = x.copy()
        xp[i] += h
        fp, _ = objective(xp)
        xm = x.copy()
        xm[i] -= h
        fm, _ = objective(xm)
        fd[i] = (fp - fm) / (2.0 * h)
    scale = max(float(np.linalg.norm(g)), float(np.linalg.norm(fd)), 1e-300)
    err = np.abs(g - fd)
    rel = float(err.max()) / scale
    worst = int(np.argmax(err))
    return {
        "max_rel_error": rel,
        "worst_index": worst,
        "analytic": g,
        "numeric": fd,
        "passed": bool(rel <= tolerance),
    }
