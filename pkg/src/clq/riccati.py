"""Extended Riccati engine: coupled backward recursions for the finite
horizon, fixed-point iteration for the infinite horizon, the unconstrained
closed form, and the sufficient existence check.

Two value coefficients are tracked per stage (and per Markov state): Ghat on
the half-line x >= 0 and Gbar on x < 0.  Each stage solves

    Ghat_t = min_{K in K-set} ghat_t(K, <continuation>),
    Gbar_t = min_{K in K-set} gbar_t(K, <continuation>)

with terminal values q_T.  The `coupling` option selects how next-stage
coefficients enter the scenario sum:

  * "sign"  - scenario k contributes Ghat_{t+1}[k] when its closed loop lands
              on x >= 0 and Gbar_{t+1}[k] otherwise (the dynamic-programming
              recursion; default).
  * "lower" - every scenario contributes Gbar_{t+1}[k] regardless of sign.
              This variant reproduces the published reference tables used by
              the bundled fixtures; see the README.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import (ClqError, ConstraintSpec, CostSpec, MarkovModel, Model,
                    ProblemSpec, ScenarioSet, kset_is_bounded, kset_vertices,
                    moments, VertexEnumerationTooLargeError)
from .objective import ObjectiveContext, ValuePair, eval_ghat, eval_gbar
from .solver import SolveResult, SolverConfig, minimize


class SingularStageMatrixError(ClqError):
    """R_t + E[G_{t+1} B'B] is singular; the closed form is undefined."""


class StageSolveError(ClqError):
    """A per-stage minimization failed; carries the (t, state) location."""

    def __init__(self, t, state, which, cause):
        super().__init__(f"stage t={t}, state={state}, branch={which}: {cause}")
        self.t = t
        self.state = state
        self.which = which
        self.cause = cause


def _stage_values(coupling: str, ghat_next: np.ndarray, gbar_next: np.ndarray):
    """Per-scenario continuation vectors (y, z) fed to the stage objectives."""
    if coupling == "sign":
        return ghat_next, gbar_next
    if coupling == "lower":
        return gbar_next, gbar_next
    raise ValueError(f"unknown coupling {coupling!r}")


@dataclass(frozen=True)
class RiccatiSolution:
    """Backward-recursion output: value coefficients and gains per stage and
    Markov state (the state axis has size 1 for i.i.d. models)."""

    horizon: int
    ghat: np.ndarray   # (T+1, m)
    gbar: np.ndarray   # (T+1, m)
    khat: np.ndarray   # (T, m, n)
    kbar: np.ndarray   # (T, m, n)
    coupling: str
    markov: bool

    @property
    def n_states(self) -> int:
        return self.ghat.shape[1]

    @property
    def n(self) -> int:
        return self.khat.shape[2]

    def value(self, x0: float, state: int = 0) -> float:
        g = self.ghat[0, state] if x0 >= 0 else self.gbar[0, state]
        return float(g * x0 * x0)


@dataclass(frozen=True)
class FixedPoint:
    """Stationary solution of the coupled equations, or the iteration's
    diagnosis when no solution exists."""

    ghat_star: float
    gbar_star: float
    khat_star: np.ndarray | None
    kbar_star: np.ndarray | None
    iterates: np.ndarray          # (k, 2) columns (ghat_i, gbar_i)
    converged: bool
    diverged: bool
    model: Model
    cost: CostSpec
    constraint: ConstraintSpec
    coupling: str

    @property
    def iterations(self) -> int:
        return self.iterates.shape[0] - 1


@dataclass(frozen=True)
class ThresholdReport:
    """Sufficient existence condition E[A^2] + eta * K_max < 1."""

    classical_threshold: float | None
    eta: float
    k_max: float
    k_set_bounded: bool
    sufficient_lhs: float

    @property
    def holds(self) -> bool:
        return self.sufficient_lhs < 1.0


def _require_finite(spec: ProblemSpec):
    if spec.horizon is None:
        raise ValueError("finite-horizon solver requires an integer horizon")


def solve_finite(spec: ProblemSpec, cfg: SolverConfig | None = None,
                 coupling: str | None = None) -> RiccatiSolution:
    """Backward recursion over t = T-1..0.

    For Markov models the stage objectives condition on the current state j:
    scenario k (the next state) is weighted by transition[j][k] and carries the
    continuation coefficients of state k.
    """
    _require_finite(spec)
    cfg = cfg or SolverConfig()
    coupling = coupling or spec.coupling
    T = spec.horizon
    m = spec.n_states
    n = spec.n

    ghat = np.empty((T + 1, m))
    gbar = np.empty((T + 1, m))
    khat = np.empty((T, m, n))
    kbar = np.empty((T, m, n))
    ghat[T] = gbar[T] = spec.q_T

    markov = spec.is_markov
    for t in range(T - 1, -1, -1):
        model = spec.model_at(t)
        cost = spec.cost_at(t)
        con = spec.constraint_at(t)
        yv, zv = _stage_values(coupling, ghat[t + 1], gbar[t + 1])
        for j in range(m):
            state = j if markov else None
            ctx = ObjectiveContext.build(model, cost, None, state=state,
                                         y_next=yv, z_next=zv)
            try:
                rh = minimize(ctx, "ghat", con, cfg)
                rb = minimize(ctx, "gbar", con, cfg)
            except ClqError as exc:
                raise StageSolveError(t, j if markov else None, "ghat/gbar", exc) from exc
            khat[t, j] = rh.K_opt
            ghat[t, j] = rh.value
            kbar[t, j] = rb.K_opt
            gbar[t, j] = rb.value
    return RiccatiSolution(horizon=T, ghat=ghat, gbar=gbar, khat=khat, kbar=kbar,
                           coupling=coupling, markov=markov)


def solve_unconstrained(spec: ProblemSpec) -> RiccatiSolution:
    """Closed form for H = 0: the two branch recursions merge into the single
    sequence G_t = q_t + E[G A^2] - (S + E[G A B'])'(R + E[G B'B])^-1 (...),
    with gains K_t = -(R + E[G B'B])^-1 (E[G A B'] + S).

    Packaged with ghat = gbar = G and kbar = -khat so downstream code treats it
    like any other solution.
    """
    _require_finite(spec)
    for i in range(len(spec.constraints)):
        if not spec.constraints[i].is_unconstrained():
            raise ValueError("solve_unconstrained requires the H = 0 encoding")
    T = spec.horizon
    m = spec.n_states
    n = spec.n
    G = np.empty((T + 1, m))
    K = np.empty((T, m, n))
    G[T] = spec.q_T
    markov = spec.is_markov
    for t in range(T - 1, -1, -1):
        model = spec.model_at(t)
        cost = spec.cost_at(t)
        for j in range(m):
            if markov:
                w = model.transition[j]
            else:
                w = model.p
            g_next = G[t + 1] if markov else np.full(model.n_scenarios, G[t + 1, 0])
            wg = w * g_next
            M = cost.R + model.b.T @ (wg[:, None] * model.b)
            v = (wg * model.a) @ model.b + cost.S
            # minimum-norm stationary point; a singular M is fine as long as
            # the stationarity system is consistent (e.g. the all-zero stage)
            Kt, *_ = np.linalg.lstsq(M, -v, rcond=None)
            scale = max(1.0, float(np.abs(M).max()), float(np.abs(v).max()))
            if np.linalg.norm(M @ Kt + v) > 1e-10 * scale:
                raise SingularStageMatrixError(
                    f"stage t={t}, state={j}: R + E[G B'B] is singular and the "
                    "stationarity system is inconsistent")
            K[t, j] = Kt
            G[t, j] = (cost.q + wg @ (model.a ** 2) + v @ Kt)
    return RiccatiSolution(horizon=T, ghat=G.copy(), gbar=G.copy(), khat=K,
                           kbar=-K, coupling=spec.coupling, markov=markov)


def solve_infinite(spec: ProblemSpec, cfg: SolverConfig | None = None,
                   eps: float = 1e-8, i_max: int = 10000,
                   coupling: str | None = None,
                   divergence_ceiling: float = 1e10,
                   growth_tol: float = 1e-4) -> FixedPoint:
    """Fixed-point iteration from (0, 0) for the stationary coefficients.

    Convergence: both successive differences <= eps.  Divergence: the smaller
    coefficient exceeds `divergence_ceiling`, or i_max is exhausted while the
    iterates still grow at relative rate >= growth_tol per step.  A run that
    merely stalls below tolerance is reported as neither converged nor
    diverged.
    """
    if spec.horizon is not None:
        raise ValueError("solve_infinite requires an infinite-horizon spec")
    if spec.is_markov:
        raise ValueError("infinite horizon supports i.i.d. models only")
    cfg = cfg or SolverConfig()
    coupling = coupling or spec.coupling
    model = spec.model_at(0)
    cost = spec.cost_at(0)
    con = spec.constraint_at(0)

    gh, gb = 0.0, 0.0
    trace = [(gh, gb)]
    converged = diverged = False
    for _ in range(i_max):
        yv, zv = _stage_values(coupling, np.array([gh]), np.array([gb]))
        ctx = ObjectiveContext.build(model, cost, None, y_next=yv[0], z_next=zv[0])
        gh1 = minimize(ctx, "ghat", con, cfg).value
        gb1 = minimize(ctx, "gbar", con, cfg).value
        trace.append((gh1, gb1))
        if abs(gh1 - gh) <= eps and abs(gb1 - gb) <= eps:
            gh, gb = gh1, gb1
            converged = True
            break
        if min(gh1, gb1) > divergence_ceiling:
            gh, gb = gh1, gb1
            diverged = True
            break
        gh, gb = gh1, gb1
    else:
        prev = trace[-2]
        growth = max(abs(gh - prev[0]) / max(abs(gh), 1.0),
                     abs(gb - prev[1]) / max(abs(gb), 1.0))
        diverged = growth >= growth_tol

    khat = kbar = None
    if converged:
        yv, zv = _stage_values(coupling, np.array([gh]), np.array([gb]))
        ctx = ObjectiveContext.build(model, cost, None, y_next=yv[0], z_next=zv[0])
        khat = minimize(ctx, "ghat", con, cfg).K_opt
        kbar = minimize(ctx, "gbar", con, cfg).K_opt
    return FixedPoint(ghat_star=gh, gbar_star=gb, khat_star=khat, kbar_star=kbar,
                      iterates=np.array(trace), converged=converged, diverged=diverged,
                      model=model, cost=cost, constraint=con, coupling=coupling)


def fixed_point_residuals(fp: FixedPoint) -> tuple[float, float]:
    """|ghat(K*, .) - Ghat*| and |gbar(K*, .) - Gbar*| under the fixed point's
    own coupling; both <= eps on a converged run."""
    if not fp.converged:
        raise ValueError("residuals are only defined for a converged fixed point")
    yv, zv = _stage_values(fp.coupling, np.array([fp.ghat_star]), np.array([fp.gbar_star]))
    ctx = ObjectiveContext.build(fp.model, fp.cost, None, y_next=yv[0], z_next=zv[0])
    return (abs(eval_ghat(ctx, fp.khat_star) - fp.ghat_star),
            abs(eval_gbar(ctx, fp.kbar_star) - fp.gbar_star))


def check_threshold(spec: ProblemSpec, k_max: float | None = None) -> ThresholdReport:
    """Sufficient existence condition for the stationary equations.

    classical_threshold = E[A^2] - (E[A]E[B])^2 / E[B^2] (scalar control only);
    eta is the largest eigenvalue of E[B'B]; K_max the largest gain norm over
    the gain set, computed by vertex enumeration when the set is bounded and
    small, or supplied by the caller.  The condition sufficient_lhs < 1
    guarantees existence; its failure is inconclusive, not a divergence proof.
    """
    model = spec.model_at(0)
    if isinstance(model, MarkovModel):
        raise ValueError("threshold check applies to i.i.d. models")
    con = spec.constraint_at(0)
    mom = moments(model)
    classical = None
    if model.n == 1:
        eb2 = float(mom.ebtb[0, 0])
        classical = mom.ea2 - (mom.ea * float(mom.eb[0])) ** 2 / eb2
    eta = float(np.linalg.eigvalsh(mom.ebtb)[-1])
    bounded = kset_is_bounded(con)
    if k_max is None:
        if not bounded:
            k_max = np.inf
        else:
            verts = kset_vertices(con)
            k_max = float(np.max(np.linalg.norm(verts, axis=1))) if len(verts) else 0.0
    lhs = mom.ea2 + eta * k_max
    return ThresholdReport(classical_threshold=classical, eta=eta, k_max=float(k_max),
                           k_set_bounded=bounded, sufficient_lhs=float(lhs))
