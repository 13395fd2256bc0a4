"""Dynamic mean-variance portfolio selection on top of the constrained LQ
solver.

The variance-minimization problem with a terminal-mean target embeds into the
LQ family: with wealth x_{t+1} = r_t x_t + P_t'u_t, target x_d, and multiplier
lam, the shifted state w_t = x_t - (x_d - lam)/gamma_t follows the standard
scalar dynamics with A_t = r_t, B_t = P_t, no-shorting gain set {K >= 0},
stage cost u'R_t u, and terminal weight 1.  The backward recursion then yields
gain tables (Khat_mv, Kbar_mv) that do not depend on lam; the optimal
multiplier has the closed form

    lam* = Gbar_0 (x_d - gamma_0 x_0) / (Gbar_0 - gamma_0^2),

which is the argmax of the piecewise-concave dual (the target above the
riskless growth path puts the dual optimum on the w_0 < 0 branch).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
import json
import os

import numpy as np

from .model import (ClqError, ConstraintSpec, CostSpec, MarkovModel, Model,
                    ProblemSpec, ScenarioSet, validate)
from .policy_sim import Policy, _sample_scenarios, _uniforms, enumerate_paths
from .riccati import RiccatiSolution, solve_finite
from .solver import SolverConfig


class TargetBelowRiskfreeError(ClqError):
    """x_d must exceed the deterministic riskless growth gamma_0 * x_0."""


class MarketValidationError(ClqError):
    pass


@dataclass(frozen=True)
class MarketSpec:
    """Market data: riskless rates per period, an excess-return distribution
    (i.i.d. scenario set or Markov chain; the `a` field of the model is
    ignored), per-stage control penalties, initial and target wealth."""

    riskfree: np.ndarray          # (T,) each > 0
    returns: Model                # b = excess-return vectors
    penalties: tuple              # tuple[CostSpec,...] length 1 or T (R only)
    x0: float
    xd: float
    initial_state: int = 0

    def __post_init__(self):
        rf = np.asarray(self.riskfree, dtype=float)
        object.__setattr__(self, "riskfree", rf)
        object.__setattr__(self, "penalties", tuple(self.penalties))

    @property
    def horizon(self) -> int:
        return self.riskfree.shape[0]

    @property
    def n(self) -> int:
        return self.returns.n

    def penalty_at(self, t: int) -> CostSpec:
        if len(self.penalties) == 1:
            return self.penalties[0]
        return self.penalties[t]

    def gamma(self) -> np.ndarray:
        """Discount factors gamma_t = prod_{k=t}^{T-1} r_k, gamma_T = 1."""
        T = self.horizon
        g = np.ones(T + 1)
        for t in range(T - 1, -1, -1):
            g[t] = g[t + 1] * self.riskfree[t]
        return g

    def embedded_problem(self) -> ProblemSpec:
        """The shifted-wealth LQ problem: A_t = r_t, B_t = P_t, u >= 0,
        stage cost u'R_t u, terminal weight 1."""
        T = self.horizon
        if isinstance(self.returns, MarkovModel):
            def stage_model(t):
                return MarkovModel(a=np.full(self.returns.n_states, self.riskfree[t]),
                                   b=self.returns.b, transition=self.returns.transition)
        else:
            def stage_model(t):
                return ScenarioSet(a=np.full(self.returns.n_scenarios, self.riskfree[t]),
                                   b=self.returns.b, p=self.returns.p)
        if np.all(self.riskfree == self.riskfree[0]):
            models = stage_model(0)
        else:
            models = tuple(stage_model(t) for t in range(T))
        costs = tuple(CostSpec(p.R, np.zeros(self.n), 0.0) for p in self.penalties)
        return ProblemSpec(
            model=models,
            costs=costs,
            q_T=1.0,
            constraints=(ConstraintSpec.nonneg(self.n),),
            horizon=T,
            x0=self.x0,
        )


@dataclass(frozen=True)
class MvCalibration:
    """Calibrated policy data: the multiplier, discount factors, value
    coefficients, gain tables, and per-stage wealth thresholds
    (x_d - lam*) / gamma_t."""

    market: MarketSpec
    riccati: RiccatiSolution
    lambda_star: float
    gamma: np.ndarray         # (T+1,)
    thresholds: np.ndarray    # (T,)
    initial_state: int

    @property
    def ghat_mv(self) -> np.ndarray:
        return self.riccati.ghat

    @property
    def gbar_mv(self) -> np.ndarray:
        return self.riccati.gbar

    @property
    def khat_mv(self) -> np.ndarray:
        return self.riccati.khat

    @property
    def kbar_mv(self) -> np.ndarray:
        return self.riccati.kbar

    def gbar0(self) -> float:
        return float(self.riccati.gbar[0, self.initial_state])

    def ghat0(self) -> float:
        return float(self.riccati.ghat[0, self.initial_state])


def _lambda_star(gbar0: float, gamma0: float, x0: float, xd: float) -> float:
    return gbar0 * (xd - gamma0 * x0) / (gbar0 - gamma0 ** 2)


def calibrate(market: MarketSpec, cfg: SolverConfig | None = None,
              coupling: str = "sign") -> MvCalibration:
    """Solve the embedded recursion and pin the optimal multiplier.

    Markov markets condition lam* on `market.initial_state`.  Rejects targets
    at or below the riskless growth path and invalid market data.
    """
    if np.any(market.riskfree <= 0):
        raise MarketValidationError("riskless rates must be positive")
    gamma = market.gamma()
    if market.xd <= gamma[0] * market.x0 + 0.0:
        raise TargetBelowRiskfreeError(
            f"target {market.xd} must exceed riskless growth {gamma[0] * market.x0}")
    spec = market.embedded_problem()
    report = validate(spec)
    if not report.passed:
        raise MarketValidationError(str(report))
    sol = solve_finite(spec, cfg, coupling=coupling)
    gbar0 = float(sol.gbar[0, market.initial_state])
    lam = _lambda_star(gbar0, gamma[0], market.x0, market.xd)
    thresholds = (market.xd - lam) / gamma[:-1]
    return MvCalibration(market=market, riccati=sol, lambda_star=lam, gamma=gamma,
                         thresholds=thresholds, initial_state=market.initial_state)


def mv_policy(cal: MvCalibration, t: int, x: float, state: int = 0) -> np.ndarray:
    """Portfolio rule: with w = x - (x_d - lam*)/gamma_t,
    u = w Khat_t on {w >= 0} and u = -w Kbar_t on {w < 0}; componentwise >= 0
    because the gains live in the no-shorting gain set."""
    T = cal.market.horizon
    if not 0 <= t < T:
        raise IndexError(f"stage {t} outside horizon {T}")
    if not 0 <= state < cal.riccati.n_states:
        raise IndexError(f"state {state} out of range")
    w = x - cal.thresholds[t]
    if w >= 0:
        return cal.khat_mv[t, state] * w
    return -cal.kbar_mv[t, state] * w


def simulate_wealth(cal: MvCalibration, n_paths: int, seed: int = 0) -> dict:
    """Sample wealth paths under the calibrated policy; returns terminal
    wealth, realized penalty sums, and the full path arrays."""
    market = cal.market
    model = market.returns
    T = market.horizon
    U = _uniforms(seed, n_paths, T)
    scen = _sample_scenarios(model, U, cal.initial_state)

    xs = np.empty((n_paths, T + 1))
    xs[:, 0] = market.x0
    penalty = np.zeros(n_paths)
    if isinstance(model, MarkovModel):
        states = np.full(n_paths, cal.initial_state, dtype=np.int64)
    else:
        states = np.zeros(n_paths, dtype=np.int64)
    for t in range(T):
        x = xs[:, t]
        w = x - cal.thresholds[t]
        kh = cal.khat_mv[t, states]
        kb = cal.kbar_mv[t, states]
        u = np.where((w >= 0)[:, None], kh * w[:, None], -kb * w[:, None])
        R = market.penalty_at(t).R
        penalty += np.einsum("pi,ij,pj->p", u, R, u)
        k = scen[:, t]
        xs[:, t + 1] = market.riskfree[t] * x + np.einsum("pi,pi->p", model.b[k], u)
        if isinstance(model, MarkovModel):
            states = k
    return {"xs": xs, "terminal": xs[:, -1], "penalty": penalty, "scenarios": scen}


@dataclass(frozen=True)
class FrontierPoint:
    xd: float
    lambda_star: float
    mean_xT: float
    var_xT: float
    penalty: float
    stderr: float
    mean_stderr: float


def _max_threads(default: int) -> int:
    cap = os.environ.get("CLQ_THREADS")
    if cap:
        try:
            return max(1, min(default, int(cap)))
        except ValueError:
            pass
    return default


def frontier(market: MarketSpec, cal: MvCalibration, targets, n_paths: int = 100_000,
             seed: int = 0) -> list[FrontierPoint]:
    """Efficient frontier over a grid of targets.

    The gain tables are target-independent, so each point reuses the
    calibrated recursion and only re-derives lam* and the thresholds.  The
    variance is the analytic term Gbar_0 (x_d - gamma_0 x_0)^2 / (gamma_0^2 -
    Gbar_0) minus the simulated penalty sum; common random numbers (one shared
    seed) smooth the curve across targets.
    """
    gamma0 = cal.gamma[0]
    gbar0 = cal.gbar0()

    def one(xd: float) -> FrontierPoint:
        if xd <= gamma0 * market.x0:
            raise TargetBelowRiskfreeError(
                f"frontier target {xd} at or below riskless growth")
        lam = _lambda_star(gbar0, gamma0, market.x0, xd)
        shifted = MvCalibration(
            market=market, riccati=cal.riccati, lambda_star=lam, gamma=cal.gamma,
            thresholds=(xd - lam) / cal.gamma[:-1], initial_state=cal.initial_state)
        sim = simulate_wealth(shifted, n_paths, seed)
        pen = float(np.mean(sim["penalty"]))
        pen_se = float(np.std(sim["penalty"], ddof=1) / np.sqrt(n_paths))
        mean_xT = float(np.mean(sim["terminal"]))
        mean_se = float(np.std(sim["terminal"], ddof=1) / np.sqrt(n_paths))
        analytic = gbar0 * (xd - market.x0 * gamma0) ** 2 / (gamma0 ** 2 - gbar0)
        return FrontierPoint(xd=xd, lambda_star=lam, mean_xT=mean_xT,
                             var_xT=analytic - pen, penalty=pen, stderr=pen_se,
                             mean_stderr=mean_se)

    targets = list(targets)
    workers = _max_threads(min(8, max(1, len(targets))))
    if workers == 1:
        return [one(x) for x in targets]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, targets))


def exact_terminal_mean(cal: MvCalibration, depth: int | None = None) -> float:
    """E[x_T] under the calibrated policy by exhaustive tree enumeration
    (exact for small horizons; 5 scenarios and T = 4 is 625 leaves)."""
    market = cal.market
    T = market.horizon if depth is None else depth
    pol = Policy(khat=cal.khat_mv, kbar=cal.kbar_mv, stationary=False,
                 markov=isinstance(market.returns, MarkovModel))
    model = market.returns
    if isinstance(model, MarkovModel):
        mdl = MarkovModel(a=np.full(model.n_states, market.riskfree[0]),
                          b=model.b, transition=model.transition)
    else:
        mdl = ScenarioSet(a=np.full(model.n_scenarios, market.riskfree[0]),
                          b=model.b, p=model.p)
    if not np.all(market.riskfree == market.riskfree[0]):
        raise ValueError("exact enumeration assumes a constant riskless rate")
    probs, xs, _ = enumerate_paths(mdl, pol, market.x0, T,
                                   initial_state=cal.initial_state,
                                   thresholds=cal.thresholds)
    return float(probs @ xs[:, T])


# ---------------------------------------------------------------------------
# Market files (JSON): the problem-file schema plus riskfree/x0/xd keys.

def market_from_dict(doc: dict) -> MarketSpec:
    from .model import _parse_model

    returns = _parse_model(doc["model"])
    riskfree = np.asarray(doc["riskfree"], dtype=float)
    n = returns.n
    cost_node = doc.get("costs")
    if cost_node is None:
        penalties = (CostSpec.zero(n),)
    elif isinstance(cost_node, dict):
        penalties = (CostSpec(np.asarray(cost_node.get("R", np.zeros((n, n))), float),
                              np.zeros(n), 0.0),)
    else:
        penalties = tuple(CostSpec(np.asarray(c.get("R", np.zeros((n, n))), float),
                                   np.zeros(n), 0.0) for c in cost_node)
    return MarketSpec(
        riskfree=riskfree,
        returns=returns,
        penalties=penalties,
        x0=float(doc["x0"]),
        xd=float(doc["xd"]),
        initial_state=int(doc.get("initial_state", 0)),
    )


def load_market(path) -> MarketSpec:
    with open(path) as fh:
        return market_from_dict(json.load(fh))
