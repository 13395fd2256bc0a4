import numpy as np
import pytest

from clq import (ConstraintSpec, CostSpec, MarkovModel, MarketSpec,
                 ProblemSpec, ScenarioSet)

# Benchmark instance: 5 joint scenarios for (A, B), n = 3 controls.
A5 = np.array([-0.7, -0.6, 0.9, 1.0, 1.1])
B5 = np.array([
    [0.18, -0.05, -0.14],
    [0.03, -0.12, -0.03],
    [-0.05, 0.05, 0.05],
    [-0.01, 0.05, 0.01],
    [-0.05, 0.01, 0.06],
])
P5 = np.array([
    [0.1, 0.2, 0.4, 0.2, 0.1],
    [0.4, 0.1, 0.3, 0.1, 0.1],
    [0.2, 0.2, 0.1, 0.2, 0.3],
    [0.1, 0.4, 0.1, 0.1, 0.3],
    [0.1, 0.2, 0.1, 0.5, 0.1],
])
R3 = np.array([[1.2, 0.3, 0.4], [0.3, 1.4, -0.3], [0.4, -0.3, 1.9]])
S3 = np.array([-0.2, 0.6, -0.5])

# Scalar instance: 5 scenarios, n = 1.
A1 = np.array([-0.8, -0.4, 0.2, 0.6, 0.9])
B1 = np.array([[-0.7], [-0.6], [0.4], [0.8], [1.0]])


@pytest.fixture
def model3() -> ScenarioSet:
    return ScenarioSet(a=A5, b=B5, p=np.full(5, 0.2))


@pytest.fixture
def markov3() -> MarkovModel:
    return MarkovModel(a=A5, b=B5, transition=P5)


@pytest.fixture
def cost3() -> CostSpec:
    return CostSpec(R3, S3, 1.1)


@pytest.fixture
def box3() -> ConstraintSpec:
    return ConstraintSpec.box([0.1] * 3, [0.5] * 3)


@pytest.fixture
def spec3_finite(model3, cost3, box3) -> ProblemSpec:
    return ProblemSpec(model=model3, costs=(cost3,) * 5, q_T=1.0,
                       constraints=(box3,), horizon=5, x0=1.0)


@pytest.fixture
def spec3_markov(markov3, cost3, box3) -> ProblemSpec:
    return ProblemSpec(model=markov3, costs=(cost3,) * 4, q_T=1.0,
                       constraints=(box3,), horizon=4, x0=1.0)


@pytest.fixture
def spec3_infinite(model3, cost3, box3) -> ProblemSpec:
    return ProblemSpec(model=model3, costs=(cost3,), q_T=0.0,
                       constraints=(box3,), horizon=None, x0=1.0)


@pytest.fixture
def model1() -> ScenarioSet:
    return ScenarioSet(a=A1, b=B1, p=np.full(5, 0.2))


def scalar_spec(lo: float, hi: float) -> ProblemSpec:
    model = ScenarioSet(a=A1, b=B1, p=np.full(5, 0.2))
    cost = CostSpec([[1.0]], [0.1], 1.0)
    con = ConstraintSpec.box([lo], [hi])
    return ProblemSpec(model=model, costs=(cost,), q_T=0.0,
                       constraints=(con,), horizon=None, x0=1.0)


@pytest.fixture
def market3() -> MarketSpec:
    returns = MarkovModel(a=np.zeros(5), b=B5, transition=P5)
    return MarketSpec(
        riskfree=np.ones(4),
        returns=returns,
        penalties=(CostSpec(1e-6 * np.eye(3), np.zeros(3), 0.0),),
        x0=100.0,
        xd=106.0,
        initial_state=0,
    )


def random_scenario_set(rng: np.random.Generator, n: int, s: int = 5,
                        a_scale: float = 1.0, b_scale: float = 0.5) -> ScenarioSet:
    a = rng.uniform(-a_scale, a_scale, s)
    b = rng.uniform(-b_scale, b_scale, (s, n))
    p = rng.uniform(0.2, 1.0, s)
    p /= p.sum()
    return ScenarioSet(a=a, b=b, p=p)


def random_psd_cost(rng: np.random.Generator, n: int, scale: float = 1.0) -> CostSpec:
    M = rng.normal(size=(n + 1, n + 1)) * scale
    C = M.T @ M / (n + 1)
    return CostSpec(C[:n, :n], C[:n, n], float(C[n, n]))
