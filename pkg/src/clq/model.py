"""Problem data for scalar-state stochastic LQ control with multiplicative noise.

The random pair (A_t, B_t) is represented by a finite discrete distribution:
either an i.i.d. scenario set or a finite-state Markov chain over scenario
realizations.  Continuous distributions must be pre-discretized by the caller;
with finite scenario sets every expectation in the solver evaluates exactly.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

PSD_TOL = 1e-10
PROB_TOL = 1e-12


class ClqError(Exception):
    """Base class for errors raised by this package."""


class InfeasibleError(ClqError):
    """The gain polyhedron {K : H K <= d} is empty."""


class VertexEnumerationTooLargeError(ClqError):
    """Vertex enumeration refused; supply an explicit gain-norm bound."""


def _freeze(arr) -> np.ndarray:
    out = np.array(arr, dtype=float)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class Moments:
    """Scenario-weighted moments of the random pair (A, B)."""

    ea2: float
    ea: float
    eb: np.ndarray      # (n,)  E[B]
    ebtb: np.ndarray    # (n,n) E[B'B]
    eab: np.ndarray     # (n,)  E[A B']
    cov_b: np.ndarray   # (n,n) E[B'B] - E[B']E[B]


def _moments_from(a: np.ndarray, b: np.ndarray, w: np.ndarray) -> Moments:
    eb = w @ b
    ebtb = b.T @ (w[:, None] * b)
    return Moments(
        ea2=float(w @ (a * a)),
        ea=float(w @ a),
        eb=_freeze(eb),
        ebtb=_freeze(ebtb),
        eab=_freeze((w * a) @ b),
        cov_b=_freeze(ebtb - np.outer(eb, eb)),
    )


@dataclass(frozen=True)
class ScenarioSet:
    """I.i.d. discrete distribution of (A, B): scenario i has value (a[i], b[i])
    with probability p[i]."""

    a: np.ndarray   # (s,)
    b: np.ndarray   # (s, n)
    p: np.ndarray   # (s,)

    def __post_init__(self):
        object.__setattr__(self, "a", _freeze(np.atleast_1d(self.a)))
        object.__setattr__(self, "b", _freeze(np.atleast_2d(self.b)))
        object.__setattr__(self, "p", _freeze(np.atleast_1d(self.p)))
        if self.b.shape[0] != self.a.shape[0] or self.p.shape[0] != self.a.shape[0]:
            raise ValueError("scenario arrays must share the first dimension")

    @property
    def n(self) -> int:
        return self.b.shape[1]

    @property
    def n_scenarios(self) -> int:
        return self.a.shape[0]

    @property
    def n_states(self) -> int:
        return 1

    def moments(self) -> Moments:
        return _moments_from(self.a, self.b, self.p)


@dataclass(frozen=True)
class MarkovModel:
    """Finite-state Markov chain over scenario realizations.

    State j fixes one realization (a[j], b[j]).  The conditioning convention:
    at decision time t the previous realized scenario index j is known, and the
    distribution of (A_t, B_t) is row j of the transition matrix over the same
    scenario values.
    """

    a: np.ndarray            # (m,)
    b: np.ndarray            # (m, n)
    transition: np.ndarray   # (m, m) row-stochastic

    def __post_init__(self):
        object.__setattr__(self, "a", _freeze(np.atleast_1d(self.a)))
        object.__setattr__(self, "b", _freeze(np.atleast_2d(self.b)))
        object.__setattr__(self, "transition", _freeze(np.atleast_2d(self.transition)))
        m = self.a.shape[0]
        if self.b.shape[0] != m or self.transition.shape != (m, m):
            raise ValueError("inconsistent Markov model dimensions")

    @property
    def n(self) -> int:
        return self.b.shape[1]

    @property
    def n_scenarios(self) -> int:
        return self.a.shape[0]

    @property
    def n_states(self) -> int:
        return self.a.shape[0]

    def moments(self, state: int) -> Moments:
        if not 0 <= state < self.n_states:
            raise IndexError(f"unknown conditioning state {state}")
        return _moments_from(self.a, self.b, self.transition[state])


Model = ScenarioSet | MarkovModel


def moments(model: Model, state: int | None = None) -> Moments:
    """Exact scenario-weighted moments; `state` is required iff `model` is Markov."""
    if isinstance(model, MarkovModel):
        if state is None:
            raise ValueError("Markov model requires a conditioning state index")
        return model.moments(state)
    if state is not None:
        raise ValueError("conditioning state is only meaningful for Markov models")
    return model.moments()


@dataclass(frozen=True)
class CostSpec:
    """Per-stage penalty block C = [[R, S], [S', q]] on (u, x)."""

    R: np.ndarray   # (n, n)
    S: np.ndarray   # (n,)
    q: float

    def __post_init__(self):
        object.__setattr__(self, "R", _freeze(np.atleast_2d(self.R)))
        object.__setattr__(self, "S", _freeze(np.atleast_1d(self.S)))
        object.__setattr__(self, "q", float(self.q))
        n = self.R.shape[0]
        if self.R.shape != (n, n) or self.S.shape != (n,):
            raise ValueError("inconsistent cost dimensions")

    @property
    def n(self) -> int:
        return self.R.shape[0]

    def block(self) -> np.ndarray:
        n = self.n
        C = np.zeros((n + 1, n + 1))
        C[:n, :n] = self.R
        C[:n, n] = self.S
        C[n, :n] = self.S
        C[n, n] = self.q
        return C

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.block())[0])

    def is_psd(self, tol: float = PSD_TOL) -> bool:
        return self.min_eigenvalue() >= -tol

    def is_pd(self, tol: float = PSD_TOL) -> bool:
        return self.min_eigenvalue() > tol

    def quad(self, u: np.ndarray, x: float) -> float:
        u = np.asarray(u, dtype=float)
        return float(u @ self.R @ u + 2.0 * x * (self.S @ u) + self.q * x * x)

    @classmethod
    def zero(cls, n: int, q: float = 0.0) -> "CostSpec":
        return cls(np.zeros((n, n)), np.zeros(n), q)


@dataclass(frozen=True)
class ConstraintSpec:
    """Control constraint H u <= d |x| in gain form: K-set = {K : H K <= d}."""

    H: np.ndarray   # (m, n)
    d: np.ndarray   # (m,)

    def __post_init__(self):
        object.__setattr__(self, "H", _freeze(np.atleast_2d(self.H)))
        object.__setattr__(self, "d", _freeze(np.atleast_1d(self.d)))
        if self.H.shape[0] != self.d.shape[0]:
            raise ValueError("H and d row counts differ")

    @property
    def n(self) -> int:
        return self.H.shape[1]

    @property
    def n_rows(self) -> int:
        return self.H.shape[0]

    @classmethod
    def unconstrained(cls, n: int) -> "ConstraintSpec":
        return cls(np.zeros((1, n)), np.zeros(1))

    @classmethod
    def box(cls, lower, upper) -> "ConstraintSpec":
        """lower <= K <= upper componentwise; entries may be +-inf / None."""
        lower = np.array([-np.inf if v is None else v for v in np.atleast_1d(lower)], float)
        upper = np.array([np.inf if v is None else v for v in np.atleast_1d(upper)], float)
        n = lower.shape[0]
        rows, rhs = [], []
        for i in range(n):
            if np.isfinite(upper[i]):
                e = np.zeros(n)
                e[i] = 1.0
                rows.append(e)
                rhs.append(upper[i])
            if np.isfinite(lower[i]):
                e = np.zeros(n)
                e[i] = -1.0
                rows.append(e)
                rhs.append(-lower[i])
        if not rows:
            return cls.unconstrained(n)
        return cls(np.array(rows), np.array(rhs))

    @classmethod
    def nonneg(cls, n: int) -> "ConstraintSpec":
        return cls(-np.eye(n), np.zeros(n))

    def is_unconstrained(self) -> bool:
        return bool(np.all(self.H == 0.0) and np.all(self.d >= 0.0))

    def contains(self, K: np.ndarray, tol: float = 1e-8) -> bool:
        return bool(np.all(self.H @ np.asarray(K, float) <= self.d + tol))

    def box_bounds(self):
        """Return (lower, upper) arrays if every row bounds a single coordinate,
        else None.  Rows of zeros with d >= 0 are vacuous and ignored."""
        lo = np.full(self.n, -np.inf)
        hi = np.full(self.n, np.inf)
        for h, di in zip(self.H, self.d):
            nz = np.nonzero(h)[0]
            if nz.size == 0:
                if di < 0:
                    return None
                continue
            if nz.size > 1:
                return None
            j = nz[0]
            if h[j] > 0:
                hi[j] = min(hi[j], di / h[j])
            else:
                lo[j] = max(lo[j], di / h[j])
        return lo, hi


def feasible_gain(constraint: ConstraintSpec) -> np.ndarray:
    """Find some K with H K <= d by a phase-one linear feasibility search.

    Raises InfeasibleError when the gain set is empty.
    """
    H, d = constraint.H, constraint.d
    n = constraint.n
    if constraint.is_unconstrained():
        return np.zeros(n)
    bb = constraint.box_bounds()
    if bb is not None:
        lo, hi = bb
        if np.any(lo > hi + 1e-12):
            raise InfeasibleError("empty gain set: contradictory bounds")
        return np.clip(np.zeros(n), lo, np.where(np.isfinite(hi), hi, 0.0))
    # minimize s subject to H K - s <= d, s >= -1
    c = np.zeros(n + 1)
    c[-1] = 1.0
    A_ub = np.hstack([H, -np.ones((H.shape[0], 1))])
    bounds = [(None, None)] * n + [(-1.0, None)]
    res = linprog(c, A_ub=A_ub, b_ub=d, bounds=bounds, method="highs")
    if not res.success or res.x is None or res.x[-1] > 1e-9:
        raise InfeasibleError("empty gain set: phase-one search found no feasible K")
    return np.asarray(res.x[:n], dtype=float)


def kset_is_bounded(constraint: ConstraintSpec) -> bool:
    """The polyhedron {H K <= d} is bounded iff its recession cone {H K <= 0}
    is trivial.  A nonzero recession direction has a nonzero component, so
    probing max +-K_i over the cone (capped at 1) is a complete check."""
    H = constraint.H
    n = constraint.n
    if constraint.is_unconstrained():
        return False
    for i in range(n):
        for sign in (1.0, -1.0):
            c = np.zeros(n)
            c[i] = -sign  # linprog minimizes
            cap = np.zeros((1, n))
            cap[0, i] = sign
            res = linprog(c, A_ub=np.vstack([H, cap]),
                          b_ub=np.concatenate([np.zeros(H.shape[0]), [1.0]]),
                          bounds=[(None, None)] * n, method="highs")
            if res.success and res.x is not None and -res.fun > 1e-9:
                return False
    return True


def kset_vertices(constraint: ConstraintSpec, max_n: int = 4, max_rows: int = 16) -> np.ndarray:
    """Enumerate the vertices of {H K <= d} by solving all n-row active subsets.

    Intended for small problems only; raises VertexEnumerationTooLargeError
    beyond (max_n, max_rows)."""
    H, d = constraint.H, constraint.d
    n, m = constraint.n, constraint.n_rows
    if n > max_n or m > max_rows:
        raise VertexEnumerationTooLargeError(
            f"vertex enumeration limited to n<={max_n}, rows<={max_rows}; got n={n}, rows={m}")
    verts = []
    for rows in itertools.combinations(range(m), n):
        sub = H[list(rows)]
        if abs(np.linalg.det(sub)) < 1e-12:
            continue
        v = np.linalg.solve(sub, d[list(rows)])
        if np.all(H @ v <= d + 1e-9):
            verts.append(v)
    if not verts:
        return np.zeros((0, n))
    verts = np.array(verts)
    # dedupe
    keep = []
    for v in verts:
        if not any(np.allclose(v, verts[k], atol=1e-9) for k in keep):
            keep.append(len(keep))
            verts[keep[-1]] = v
    return verts[: len(keep)]


@dataclass(frozen=True)
class Violation:
    code: str
    where: str
    message: str
    value: float | None = None

    def __str__(self):
        v = "" if self.value is None else f" (value: {self.value:g})"
        return f"[{self.code}] {self.where}: {self.message}{v}"


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple
    kset_bounded: tuple
    notes: tuple = ()

    @property
    def passed(self) -> bool:
        return len(self.violations) == 0

    def __str__(self):
        if self.passed:
            return "valid"
        return "\n".join(str(v) for v in self.violations)


COUPLINGS = ("sign", "lower")


@dataclass(frozen=True)
class ProblemSpec:
    """A full constrained LQ problem instance.

    `model` may be a single distribution shared by all stages, or a tuple with
    one entry per stage (used by the mean-variance embedding when the riskless
    rate varies over time).  `costs` has one entry per stage t < T; `q_T` is
    the terminal weight.  For infinite horizon (`horizon is None`) a single
    cost and constraint apply to every stage.
    """

    model: Model | tuple
    costs: tuple          # tuple[CostSpec, ...]
    q_T: float
    constraints: tuple    # tuple[ConstraintSpec, ...] (length 1 = shared)
    horizon: int | None
    x0: float = 0.0
    coupling: str = "sign"

    def __post_init__(self):
        if isinstance(self.model, (ScenarioSet, MarkovModel)):
            pass
        else:
            object.__setattr__(self, "model", tuple(self.model))
        object.__setattr__(self, "costs", tuple(self.costs))
        object.__setattr__(self, "constraints", tuple(self.constraints))
        if self.coupling not in COUPLINGS:
            raise ValueError(f"coupling must be one of {COUPLINGS}")

    def model_at(self, t: int) -> Model:
        if isinstance(self.model, tuple):
            return self.model[t]
        return self.model

    def cost_at(self, t: int) -> CostSpec:
        if len(self.costs) == 1:
            return self.costs[0]
        return self.costs[t]

    def constraint_at(self, t: int) -> ConstraintSpec:
        if len(self.constraints) == 1:
            return self.constraints[0]
        return self.constraints[t]

    @property
    def n(self) -> int:
        return self.model_at(0).n

    @property
    def is_markov(self) -> bool:
        return isinstance(self.model_at(0), MarkovModel)

    @property
    def n_states(self) -> int:
        return self.model_at(0).n_states


def _validate_scenario_set(ss: ScenarioSet, where: str, out: list):
    if ss.n < 1:
        out.append(Violation("control-dim", where, "control dimension must be >= 1"))
        return
    if np.any(ss.p < -PROB_TOL):
        out.append(Violation("neg-prob", where, "negative scenario probability",
                             float(ss.p.min())))
    total = float(ss.p.sum())
    if abs(total - 1.0) > PROB_TOL:
        out.append(Violation("prob-sum", where, "probabilities do not sum to 1", total))
    min_eig = float(np.linalg.eigvalsh(ss.moments().cov_b)[0])
    if min_eig <= PSD_TOL:
        out.append(Violation("cov-b", where,
                             "Cov[B] must be positive definite", min_eig))


def _validate_markov(mm: MarkovModel, where: str, out: list):
    P = mm.transition
    for j, row in enumerate(P):
        if abs(float(row.sum()) - 1.0) > PROB_TOL:
            out.append(Violation("row-sum", f"{where}.transition[{j}]",
                                 "transition row does not sum to 1", float(row.sum())))
        if np.any(row < -PROB_TOL) or np.any(row > 1.0 + PROB_TOL):
            out.append(Violation("row-range", f"{where}.transition[{j}]",
                                 "transition entries must lie in [0, 1]"))
        min_eig = float(np.linalg.eigvalsh(mm.moments(j).cov_b)[0])
        if min_eig <= PSD_TOL:
            out.append(Violation("cov-b", f"{where}.state[{j}]",
                                 "conditional Cov[B] must be positive definite", min_eig))


def validate(spec: ProblemSpec) -> ValidationReport:
    """Check every model assumption; violations are reported, never raised."""
    out: list[Violation] = []
    notes: list[str] = []

    models = spec.model if isinstance(spec.model, tuple) else (spec.model,)
    for idx, mdl in enumerate(models):
        where = f"model[{idx}]" if len(models) > 1 else "model"
        if isinstance(mdl, MarkovModel):
            _validate_markov(mdl, where, out)
        else:
            _validate_scenario_set(mdl, where, out)
        if mdl.n != spec.n:
            out.append(Violation("dim", where, "control dimension differs across stages"))

    infinite = spec.horizon is None
    if infinite:
        if spec.is_markov:
            out.append(Violation("markov-infinite", "horizon",
                                 "infinite horizon requires an i.i.d. model"))
        if len(spec.costs) != 1:
            out.append(Violation("cost-count", "costs",
                                 "infinite horizon takes a single stage cost"))
        for c in spec.costs:
            if not c.is_pd():
                out.append(Violation("cost-pd", "costs",
                                     "stage cost block must be positive definite "
                                     "for infinite horizon", c.min_eigenvalue()))
    else:
        T = spec.horizon
        if T is None or T < 1:
            out.append(Violation("horizon", "horizon", "horizon must be >= 1"))
        if len(spec.costs) not in (1, T):
            out.append(Violation("cost-count", "costs",
                                 f"expected 1 or {T} stage costs, got {len(spec.costs)}"))
        for t, c in enumerate(spec.costs):
            if not c.is_psd():
                out.append(Violation("cost-psd", f"costs[{t}]",
                                     "stage cost block must be positive semidefinite",
                                     c.min_eigenvalue()))
        if spec.q_T < 0:
            out.append(Violation("terminal", "q_T", "terminal weight must be >= 0",
                                 spec.q_T))
        if len(models) not in (1, T or 0):
            out.append(Violation("model-count", "model",
                                 f"expected 1 or {T} stage models, got {len(models)}"))
        if len(spec.constraints) not in (1, T):
            out.append(Violation("constraint-count", "constraint",
                                 f"expected 1 or {T} constraints, got {len(spec.constraints)}"))

    bounded = []
    for i, con in enumerate(spec.constraints):
        where = f"constraint[{i}]" if len(spec.constraints) > 1 else "constraint"
        if con.n != spec.n:
            out.append(Violation("dim", where, "constraint dimension mismatch"))
            bounded.append(False)
            continue
        try:
            feasible_gain(con)
        except InfeasibleError:
            out.append(Violation("infeasible", where, "gain set {K : HK <= d} is empty"))
            bounded.append(False)
            continue
        b = kset_is_bounded(con)
        bounded.append(b)
        if not b:
            notes.append(f"{where}: gain set is unbounded")

    for c in spec.costs:
        if c.n != spec.n:
            out.append(Violation("dim", "costs", "cost dimension mismatch"))

    if not np.isfinite(spec.x0):
        out.append(Violation("x0", "x0", "initial state must be finite"))

    return ValidationReport(tuple(out), tuple(bounded), tuple(notes))


# ---------------------------------------------------------------------------
# Problem files (JSON)

def _parse_model(node) -> Model:
    if "iid" in node:
        sc = node["iid"]["scenarios"]
        return ScenarioSet(
            a=[s.get("a", 0.0) for s in sc],
            b=[s["b"] for s in sc],
            p=[s["p"] for s in sc],
        )
    if "markov" in node:
        mk = node["markov"]
        return MarkovModel(
            a=[s.get("a", 0.0) for s in mk["states"]],
            b=[s["b"] for s in mk["states"]],
            transition=mk["transition"],
        )
    raise ValueError("model must contain an 'iid' or 'markov' entry")


def _parse_costs(node, n: int):
    """Returns (costs tuple, q_T). Dict form carries qT; list form has one
    entry per stage plus a final {'q': qT} terminal entry."""
    def one(c) -> CostSpec:
        R = np.asarray(c.get("R", np.zeros((n, n))), dtype=float)
        S = np.asarray(c.get("S", np.zeros(n)), dtype=float)
        return CostSpec(R, S, float(c.get("q", 0.0)))

    if isinstance(node, dict):
        return (one(node),), float(node.get("qT", 0.0))
    stages = [one(c) for c in node[:-1]]
    term = node[-1]
    if set(term) - {"q", "qT"}:
        raise ValueError("last cost entry must give only the terminal weight")
    return tuple(stages), float(term.get("qT", term.get("q", 0.0)))


def _parse_constraint(node, n: int) -> ConstraintSpec:
    if "box" in node:
        box = node["box"]
        return ConstraintSpec.box(box.get("lower", [None] * n),
                                  box.get("upper", [None] * n))
    if node.get("nonneg"):
        return ConstraintSpec.nonneg(n)
    if "H" in node:
        return ConstraintSpec(np.asarray(node["H"], float), np.asarray(node["d"], float))
    raise ValueError("constraint must give H/d, a box, or nonneg")


def problem_from_dict(doc: dict) -> ProblemSpec:
    model = _parse_model(doc["model"])
    n = model.n
    costs, q_T = _parse_costs(doc["costs"], n)
    con_node = doc.get("constraint", {"H": np.zeros((1, n)), "d": np.zeros(1)})
    if isinstance(con_node, list):
        constraints = tuple(_parse_constraint(c, n) for c in con_node)
    else:
        constraints = (_parse_constraint(con_node, n),)
    horizon = doc.get("horizon", "infinite")
    horizon = None if horizon in (None, "infinite") else int(horizon)
    return ProblemSpec(
        model=model,
        costs=costs,
        q_T=q_T,
        constraints=constraints,
        horizon=horizon,
        x0=float(doc.get("x0", 0.0)),
        coupling=doc.get("coupling", "sign"),
    )


def load_problem(path) -> ProblemSpec:
    with open(path) as fh:
        return problem_from_dict(json.load(fh))
