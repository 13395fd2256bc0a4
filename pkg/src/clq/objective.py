"""Exact evaluation and differentiation of the per-stage objectives.

For a gain K the two off-line objectives are scenario sums

    ghat(K, y, z) = (K,1)' C (K,1)  + E[(A + B K)^2 * (y on {A+BK >= 0}, z on {A+BK < 0})]
    gbar(K, y, z) = (-K,1)' C (-K,1) + E[(A - B K)^2 * (y on {A-BK <= 0}, z on {A-BK > 0})]

where y is the continuation coefficient on the half-line x >= 0 and z the one
on x < 0.  The indicator split in gbar reflects u = -K x for x < 0: the next
state is nonnegative exactly when A - B K <= 0.  A scenario sitting exactly on
the kink (closed loop = 0) contributes through the y branch in both; its
squared term vanishes there, so only the reported subgradient branch is
affected.

Everything here is a pure function of immutable inputs; expectations over the
finite scenario set are computed exactly, so differentiation passes through
the sum without any conditions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import CostSpec, MarkovModel, Model, ScenarioSet, _freeze


@dataclass(frozen=True)
class ValuePair:
    """Continuation coefficients (y on {x >= 0}, z on {x < 0}), both >= 0."""

    y: float
    z: float

    def __post_init__(self):
        if self.y < 0 or self.z < 0:
            raise ValueError("continuation values must be nonnegative")


@dataclass(frozen=True)
class ObjectiveContext:
    """One stage's data: scenario values, weights, cost block, and per-scenario
    continuation coefficients.

    For an i.i.d. model, y and z are constant vectors.  For a Markov model
    conditioned on state j, the weights are row j of the transition matrix and
    y[k], z[k] are the next-stage coefficients of scenario (= next state) k.
    """

    a: np.ndarray     # (s,)
    b: np.ndarray     # (s, n)
    w: np.ndarray     # (s,) probability weights
    cost: CostSpec
    y: np.ndarray     # (s,)
    z: np.ndarray     # (s,)

    def __post_init__(self):
        s = self.a.shape[0]
        for name in ("a", "b", "w", "y", "z"):
            object.__setattr__(self, name, _freeze(getattr(self, name)))
        if self.b.shape[0] != s or self.w.shape[0] != s:
            raise ValueError("scenario arrays must share the first dimension")
        if self.y.shape != (s,) or self.z.shape != (s,):
            raise ValueError("continuation arrays must have one entry per scenario")

    @property
    def n(self) -> int:
        return self.b.shape[1]

    @classmethod
    def build(cls, model: Model, cost: CostSpec, values, state: int | None = None,
              y_next: np.ndarray | None = None, z_next: np.ndarray | None = None
              ) -> "ObjectiveContext":
        """Assemble a context from a model.

        `values` is a ValuePair applied to every scenario; alternatively pass
        per-scenario arrays via y_next / z_next (Markov recursions index the
        continuation by the next state).
        """
        if isinstance(model, MarkovModel):
            if state is None:
                raise ValueError("Markov model requires a conditioning state")
            a, b, w = model.a, model.b, model.transition[state]
        else:
            if state is not None:
                raise ValueError("state index only applies to Markov models")
            a, b, w = model.a, model.b, model.p
        s = a.shape[0]
        if values is not None:
            y = np.full(s, float(values.y))
            z = np.full(s, float(values.z))
        else:
            y = np.asarray(y_next, dtype=float)
            z = np.asarray(z_next, dtype=float)
            if y.size == 1:
                y = np.full(s, float(y.reshape(())))
            if z.size == 1:
                z = np.full(s, float(z.reshape(())))
        return cls(a=a, b=b, w=w, cost=cost, y=y, z=z)

    def _check_dim(self, v: np.ndarray):
        if v.shape[-1] != self.n:
            raise ValueError(f"gain/control dimension {v.shape[-1]} != model dimension {self.n}")


def eval_g(ctx: ObjectiveContext, u, x: float) -> float:
    """Stage objective as a function of the control itself at state x."""
    u = np.asarray(u, dtype=float)
    ctx._check_dim(u)
    closed = ctx.a * x + ctx.b @ u
    weightv = np.where(closed >= 0.0, ctx.y, ctx.z)
    return ctx.cost.quad(u, x) + float(ctx.w @ (closed * closed * weightv))


def _quad_hat(ctx: ObjectiveContext, K: np.ndarray) -> float:
    c = ctx.cost
    return float(K @ c.R @ K + 2.0 * (c.S @ K) + c.q)


def _quad_bar(ctx: ObjectiveContext, K: np.ndarray) -> float:
    c = ctx.cost
    return float(K @ c.R @ K - 2.0 * (c.S @ K) + c.q)


def eval_ghat(ctx: ObjectiveContext, K) -> float:
    K = np.asarray(K, dtype=float)
    ctx._check_dim(K)
    closed = ctx.a + ctx.b @ K
    weightv = np.where(closed >= 0.0, ctx.y, ctx.z)
    return _quad_hat(ctx, K) + float(ctx.w @ (closed * closed * weightv))


def eval_gbar(ctx: ObjectiveContext, K) -> float:
    K = np.asarray(K, dtype=float)
    ctx._check_dim(K)
    closed = ctx.a - ctx.b @ K
    weightv = np.where(closed <= 0.0, ctx.y, ctx.z)
    return _quad_bar(ctx, K) + float(ctx.w @ (closed * closed * weightv))


def grad_ghat(ctx: ObjectiveContext, K) -> np.ndarray:
    """Exact gradient; at a kink the boundary scenario is assigned to the
    y branch, matching the indicator convention of the evaluation."""
    K = np.asarray(K, dtype=float)
    ctx._check_dim(K)
    closed = ctx.a + ctx.b @ K
    weightv = np.where(closed >= 0.0, ctx.y, ctx.z)
    expect = (ctx.w * weightv * closed) @ ctx.b
    return 2.0 * (ctx.cost.R @ K + ctx.cost.S + expect)


def grad_gbar(ctx: ObjectiveContext, K) -> np.ndarray:
    K = np.asarray(K, dtype=float)
    ctx._check_dim(K)
    closed = ctx.a - ctx.b @ K
    weightv = np.where(closed <= 0.0, ctx.y, ctx.z)
    expect = (ctx.w * weightv * closed) @ ctx.b
    return 2.0 * (ctx.cost.R @ K - ctx.cost.S - expect)


def eval_ghat_many(ctx: ObjectiveContext, Ks: np.ndarray) -> np.ndarray:
    """Vectorized eval_ghat over a batch of gains, shape (M, n) -> (M,)."""
    Ks = np.asarray(Ks, dtype=float)
    ctx._check_dim(Ks)
    quad = np.einsum("mi,ij,mj->m", Ks, ctx.cost.R, Ks) + 2.0 * (Ks @ ctx.cost.S) + ctx.cost.q
    closed = ctx.a[None, :] + Ks @ ctx.b.T                      # (M, s)
    weightv = np.where(closed >= 0.0, ctx.y[None, :], ctx.z[None, :])
    return quad + (closed * closed * weightv) @ ctx.w


def eval_gbar_many(ctx: ObjectiveContext, Ks: np.ndarray) -> np.ndarray:
    Ks = np.asarray(Ks, dtype=float)
    ctx._check_dim(Ks)
    quad = np.einsum("mi,ij,mj->m", Ks, ctx.cost.R, Ks) - 2.0 * (Ks @ ctx.cost.S) + ctx.cost.q
    closed = ctx.a[None, :] - Ks @ ctx.b.T
    weightv = np.where(closed <= 0.0, ctx.y[None, :], ctx.z[None, :])
    return quad + (closed * closed * weightv) @ ctx.w


def curvature_bound(ctx: ObjectiveContext) -> float:
    """Upper bound on the Hessian spectral norm, valid on every linearity
    region of either branch: 2 * lmax(R + E[max(y,z) B'B])."""
    gmax = np.maximum(ctx.y, ctx.z)
    M = ctx.cost.R + ctx.b.T @ ((ctx.w * gmax)[:, None] * ctx.b)
    return 2.0 * float(np.linalg.eigvalsh(M)[-1])


def unconstrained_gain(ctx: ObjectiveContext, which: str, gvec: np.ndarray | None = None
                       ) -> np.ndarray | None:
    """Minimizer of the branch objective with a fixed per-scenario weight
    vector (defaults to max(y, z)); None when the normal matrix is singular.

    Used as a warm start: with weights frozen the objective is quadratic and
    the stationary point is -(R + E[g B'B])^-1 (E[g A B'] + S) for the hat
    branch and its negative for the bar branch.
    """
    if gvec is None:
        gvec = np.maximum(ctx.y, ctx.z)
    wg = ctx.w * gvec
    M = ctx.cost.R + ctx.b.T @ (wg[:, None] * ctx.b)
    v = (wg * ctx.a) @ ctx.b + ctx.cost.S
    try:
        K = np.linalg.solve(M, -v)
    except np.linalg.LinAlgError:
        return None
    return K if which == "ghat" else -K
