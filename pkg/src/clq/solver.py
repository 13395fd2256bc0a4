"""Minimization of the convex piecewise-quadratic branch objectives over the
gain polyhedron {K : H K <= d}.

The objectives are C^1 (the squared closed-loop term vanishes at each kink),
so projected gradient with a backtracking line search converges linearly; the
gradient and function values are exact scenario sums.  Projection is
componentwise clipping for box-representable sets and a cyclic dual ascent
(Hildreth) for general polyhedra.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import nnls

from .model import ClqError, ConstraintSpec, feasible_gain
from . import objective as obj


class UnboundedBelowError(ClqError):
    """Iterates escaped along a recession direction; no finite minimizer."""


class NonBoxConstraintError(ClqError):
    pass


class DimensionTooLargeError(ClqError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-9            # projected-gradient norm target
    max_iter: int = 10000
    armijo: float = 1e-4
    backtrack: float = 0.5
    step_growth: float = 2.0
    divergence_norm: float = 1e8
    projection_tol: float = 1e-12
    projection_sweeps: int = 2000
    history: bool = False


@dataclass(frozen=True)
class SolveResult:
    K_opt: np.ndarray
    value: float
    iterations: int
    pg_residual: float
    kkt_residual: float
    active_rows: tuple
    converged: bool
    f_history: tuple = ()   # per-iteration objective values when cfg.history is set


def make_projector(constraint: ConstraintSpec, cfg: SolverConfig | None = None):
    """Euclidean projector onto {K : H K <= d}, specialized once per set."""
    cfg = cfg or SolverConfig()
    if constraint.is_unconstrained():
        return lambda v: np.asarray(v, dtype=float)
    bb = constraint.box_bounds()
    if bb is not None:
        lo, hi = bb
        return lambda v: np.clip(v, lo, hi)
    return lambda v: _project_hildreth(constraint, np.asarray(v, dtype=float), cfg)


def project(constraint: ConstraintSpec, v: np.ndarray, cfg: SolverConfig | None = None
            ) -> np.ndarray:
    """Euclidean projection onto {K : H K <= d}."""
    return make_projector(constraint, cfg)(np.asarray(v, dtype=float))


def _project_hildreth(constraint: ConstraintSpec, v: np.ndarray, cfg: SolverConfig
                      ) -> np.ndarray:
    """Cyclic dual coordinate ascent for min 1/2||K - v||^2 s.t. HK <= d.
    With K = v - H'lam, each sweep updates lam_i >= 0 to clear row i."""
    H, d = constraint.H, constraint.d
    norms = np.einsum("ij,ij->i", H, H)
    lam = np.zeros(H.shape[0])
    K = v.copy()
    for _ in range(cfg.projection_sweeps):
        delta_max = 0.0
        for i in range(H.shape[0]):
            if norms[i] < 1e-300:
                continue
            resid = H[i] @ K - d[i]
            new = max(0.0, lam[i] + resid / norms[i])
            step = new - lam[i]
            if step != 0.0:
                K -= step * H[i]
                lam[i] = new
                delta_max = max(delta_max, abs(step) * np.sqrt(norms[i]))
        if delta_max <= cfg.projection_tol:
            break
    return K


def kkt_residual(constraint: ConstraintSpec, K: np.ndarray, grad: np.ndarray,
                 active_tol: float = 1e-7):
    """Stationarity residual min_{mu>=0} ||grad + H_A' mu|| over rows active at K,
    together with the active row indices.  Complementary slackness holds by
    construction (only near-active rows receive multipliers)."""
    H, d = constraint.H, constraint.d
    slack = d - H @ K
    active = np.nonzero(slack <= active_tol * (1.0 + np.abs(d)))[0]
    if active.size == 0:
        return float(np.linalg.norm(grad)), ()
    A = H[active].T
    mu, res = nnls(A, -grad)
    return float(res), tuple(int(i) for i in active)


def _branch(ctx: obj.ObjectiveContext, which: str):
    if which == "ghat":
        return (lambda K: obj.eval_ghat(ctx, K)), (lambda K: obj.grad_ghat(ctx, K))
    if which == "gbar":
        return (lambda K: obj.eval_gbar(ctx, K)), (lambda K: obj.grad_gbar(ctx, K))
    raise ValueError("which must be 'ghat' or 'gbar'")


def minimize(ctx: obj.ObjectiveContext, which: str, constraint: ConstraintSpec,
             cfg: SolverConfig | None = None, x0: np.ndarray | None = None
             ) -> SolveResult:
    """Projected gradient with backtracking on the exact branch objective.

    Starts from the projected closed-form minimizer of the frozen-weight
    quadratic (or from `x0` when given).  Convergence requires both the
    projected-gradient fixed-point residual and the KKT stationarity residual
    to clear tolerance.  Escape along an unbounded descent direction raises
    UnboundedBelowError; hitting max_iter returns the best iterate flagged
    non-converged.
    """
    cfg = cfg or SolverConfig()
    f, g = _branch(ctx, which)
    proj = make_projector(constraint, cfg)

    K = x0 if x0 is not None else obj.unconstrained_gain(ctx, which)
    if K is None or not np.all(np.isfinite(K)):
        K = feasible_gain(constraint)
    K = proj(np.asarray(K, dtype=float))
    if not constraint.contains(K, tol=1e-6):
        K = feasible_gain(constraint)  # raises InfeasibleError on an empty set

    L = obj.curvature_bound(ctx)
    s_ref = 1.0 / L if L > 0 else 1.0   # fixed step for the convergence test
    step = s_ref
    fK = f(K)
    gK = g(K)
    history = [fK] if cfg.history else None
    pg = np.inf
    it = 0
    for it in range(1, cfg.max_iter + 1):
        pg = float(np.linalg.norm(K - proj(K - s_ref * gK)))
        if pg <= cfg.tol:
            break
        K_new = proj(K - step * gK)
        diff = K_new - K
        dn2 = float(diff @ diff)
        f_new = f(K_new)
        # sufficient decrease: f(K+) <= f(K) + g'(K+-K) + ||K+-K||^2/(2s)
        backtracks = 0
        while f_new > fK + gK @ diff + dn2 / (2.0 * step) + 1e-15 and backtracks < 60:
            step *= cfg.backtrack
            K_new = proj(K - step * gK)
            diff = K_new - K
            dn2 = float(diff @ diff)
            f_new = f(K_new)
            backtracks += 1
        K, fK = K_new, f_new
        gK = g(K)
        if history is not None:
            history.append(fK)
        if np.linalg.norm(K) > cfg.divergence_norm:
            raise UnboundedBelowError(
                f"{which}: iterates exceeded {cfg.divergence_norm:g}; "
                "objective appears unbounded below on the gain set")
        if backtracks == 0:
            step = min(step * cfg.step_growth, 1e4 * s_ref)

    kkt, active = kkt_residual(constraint, K, gK)
    converged = pg <= cfg.tol and kkt <= 10.0 * cfg.tol
    return SolveResult(
        K_opt=K,
        value=f(K),
        iterations=it,
        pg_residual=float(pg),
        kkt_residual=kkt,
        active_rows=active,
        converged=converged,
        f_history=tuple(history) if history is not None else (),
    )


def brute_force_oracle(ctx: obj.ObjectiveContext, which: str,
                       constraint: ConstraintSpec, resolution: float = 1e-3,
                       chunk: int = 500_000) -> SolveResult:
    """Exhaustive grid minimization over a finite box; test oracle only.

    The grid spacing along each axis is at most `resolution` and includes both
    box corners.  Only box-representable constraints with finite bounds and
    n <= 3 are accepted.
    """
    bb = constraint.box_bounds()
    if bb is None:
        raise NonBoxConstraintError("oracle requires a box-representable gain set")
    lo, hi = bb
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise NonBoxConstraintError("oracle requires finite box bounds")
    n = constraint.n
    if n > 3:
        raise DimensionTooLargeError("oracle supports n <= 3")

    axes = []
    for i in range(n):
        width = hi[i] - lo[i]
        count = max(2, int(np.ceil(width / resolution)) + 1)
        axes.append(np.linspace(lo[i], hi[i], count))
    eval_many = obj.eval_ghat_many if which == "ghat" else obj.eval_gbar_many

    best_val = np.inf
    best_K = None
    total = int(np.prod([len(ax) for ax in axes]))
    mesh_iter = _grid_chunks(axes, chunk)
    for Ks in mesh_iter:
        vals = eval_many(ctx, Ks)
        i = int(np.argmin(vals))
        if vals[i] < best_val:
            best_val = float(vals[i])
            best_K = Ks[i].copy()
    grad = (obj.grad_ghat if which == "ghat" else obj.grad_gbar)(ctx, best_K)
    kkt, active = kkt_residual(constraint, best_K, grad, active_tol=resolution)
    return SolveResult(
        K_opt=best_K,
        value=best_val,
        iterations=total,
        pg_residual=float("nan"),
        kkt_residual=kkt,
        active_rows=active,
        converged=True,
    )


def _grid_chunks(axes, chunk: int):
    """Yield (M, n) blocks of the full cartesian grid without materializing it."""
    n = len(axes)
    sizes = [len(ax) for ax in axes]
    total = int(np.prod(sizes))
    strides = np.ones(n, dtype=np.int64)
    for i in range(n - 2, -1, -1):
        strides[i] = strides[i + 1] * sizes[i + 1]
    start = 0
    while start < total:
        stop = min(start + chunk, total)
        idx = np.arange(start, stop, dtype=np.int64)
        Ks = np.empty((stop - start, n))
        for i in range(n):
            Ks[:, i] = axes[i][(idx // strides[i]) % sizes[i]]
        yield Ks
        start = stop
