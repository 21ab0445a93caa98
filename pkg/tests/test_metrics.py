import math

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from hacsurv.generators import DomainError, EmpiricalGenerator, NestedParametric, ParametricGenerator
from hacsurv.hac import HierarchicalCopula, IndependentCopula, SymmetricCopula
from hacsurv.marginals import MonotoneSurvivalNet, WeibullCoxMarginals
from hacsurv.metrics import (
    PredictionGrid,
    StepFunction,
    _cif_from_log_s,
    ctd_index,
    evaluate,
    ibs,
    km_censoring,
    predict,
    predict_cif,
    quantile_grid,
    survival_l1,
    uniform_grid,
)
from hacsurv.sampling import default_copula, default_spec, generate_synthetic


def clayton(t):
    return ParametricGenerator("clayton", t)


def weib(k=2, d=1, rate=1.0):
    return WeibullCoxMarginals([1.0] * k, [1.0 / rate] * k, np.zeros((k, d)))


# ------------------------------------------------------------------ CIF


def test_cif_independent_is_one_minus_survival(rng):
    m = WeibullCoxMarginals([1.0, 2.0, 1.5], [1.0, 0.7, 2.0], rng.normal(size=(3, 2)))
    x = rng.uniform(0, 1, (30, 2))
    t = rng.uniform(0.05, 2, 30)
    with torch.no_grad():
        s = torch.exp(m(torch.as_tensor(x), torch.as_tensor(t))[0]).numpy()
    for k in range(3):
        assert np.array_equal(predict_cif(IndependentCopula(3), m, k, t, x), 1.0 - s[:, k]) or np.allclose(
            predict_cif(IndependentCopula(3), m, k, t, x), 1.0 - s[:, k], atol=1e-15
        )


def test_cif_zero_when_all_alive():
    for cop in (IndependentCopula(3), SymmetricCopula(clayton(2.0), 3)):
        f = _cif_from_log_s(cop, torch.zeros(1, 3, dtype=torch.float64))
        assert torch.all(f == 0)


def test_cif_symmetric_clayton_example():
    m = weib(rate=2.0)
    f = predict_cif(SymmetricCopula(clayton(1.0), 2), m, 1, 0.5 * math.log(2), [0.0])
    assert f == pytest.approx(1 / 3, abs=1e-12)


def test_cif_errors():
    with pytest.raises(DomainError):
        predict_cif(IndependentCopula(2), weib(), 0, 0.0, [0.0])
    with pytest.raises(IndexError):
        predict_cif(IndependentCopula(2), weib(), 2, 1.0, [0.0])


def nested():
    outer = clayton(1.0)
    return HierarchicalCopula(outer, [0], [(NestedParametric(outer, 5.0), [1, 2])])


def net3(normalize=False):
    return MonotoneSurvivalNet(3, 2, 16, 16, 16, 2, time_scale=2.0, normalize=normalize, seed=3)


DEPENDENT = [SymmetricCopula(EmpiricalGenerator(32, 8, 1, seed=1), 3), nested()]


@pytest.mark.parametrize("cop", [IndependentCopula(3)] + DEPENDENT, ids=["indep", "sym", "hier"])
def test_cif_bounded_and_vanishing_at_origin(cop, rng):
    x = rng.uniform(0, 1, (50, 2))
    pred = predict(cop, net3(), x, np.linspace(0.01, 4.0, 100))
    assert np.all((pred.cif >= 0) & (pred.cif <= 1))
    # F(t -> 0) -> 0 needs S(0 | x) = 1, i.e. the normalised network
    early = predict(cop, net3(normalize=True), x, [1e-13])
    assert np.all(early.cif < 1e-3)


def test_cif_monotone_under_independence(rng):
    x = rng.uniform(0, 1, (50, 2))
    pred = predict(IndependentCopula(3), net3(), x, np.linspace(0.01, 4.0, 100))
    assert np.all(np.diff(pred.cif, axis=-1) >= 0)


@pytest.mark.xfail(strict=True, reason="the conditional CIF is not monotone in t under dependence; see the closed-form counterexample below")
@pytest.mark.parametrize("cop", [SymmetricCopula(clayton(3.0), 4), default_copula()], ids=["sym", "hier"])
def test_cif_monotone_under_dependence(cop):
    ds = generate_synthetic(default_spec(n=200, seed=0))
    pred = predict(cop, ds.truth, ds.x[:50], quantile_grid(ds.time, 100))
    assert np.all(np.diff(pred.cif, axis=-1) >= -1e-12)


def test_cif_nonmonotone_closed_form_counterexample():
    # Clayton theta = 1, S_0 = exp(-t), S_1 = exp(-10 t):
    # F_0(t) = 1 - C(u, v) / v = (e^t - 1) / (e^t + e^{10 t} - 1), which rises then falls back to 0
    m = WeibullCoxMarginals([1.0, 1.0], [1.0, 0.1], np.zeros((2, 1)))
    cop = SymmetricCopula(clayton(1.0), 2)
    t = np.array([0.1, 1.0])
    closed = (np.exp(t) - 1) / (np.exp(t) + np.exp(10 * t) - 1)
    got = predict_cif(cop, m, 0, t, np.zeros((2, 1)))
    assert np.allclose(got, closed, rtol=1e-10)
    assert got[1] < got[0]


def test_predict_matches_pointwise(rng):
    cop, marg = nested(), WeibullCoxMarginals([1.0, 2.0, 1.5], [1.0, 0.7, 2.0], rng.normal(size=(3, 2)))
    x = rng.uniform(0, 1, (5, 2))
    grid = np.array([0.2, 0.5, 1.3])
    pred = predict(cop, marg, x, grid)
    for i in range(5):
        for g, t in enumerate(grid):
            assert pred.cif[i, 2, g] == pytest.approx(predict_cif(cop, marg, 2, t, x[i]), abs=1e-14)


# ------------------------------------------------------------------ Survival-L1


def test_survival_l1_zero_for_truth(rng):
    truth = WeibullCoxMarginals([1.3, 0.9], [1.0, 2.0], rng.normal(size=(2, 3)))
    x = rng.uniform(0, 1, (20, 3))
    grid = uniform_grid(4.0, 200)
    assert np.all(survival_l1(predict(IndependentCopula(2), truth, x, grid), truth, x, 4.0) == 0.0)


def test_survival_l1_constant_one_vs_exponential():
    grid = uniform_grid(5.0, 200)
    est = PredictionGrid(grid, np.ones((1, 1, 200)))
    v = survival_l1(est, weib(k=1), np.zeros((1, 1)), 5.0)
    assert v[0] == pytest.approx((5 - (1 - math.exp(-5))) / 5, abs=2e-4)


def test_survival_l1_needs_oracle():
    with pytest.raises(ValueError):
        survival_l1(PredictionGrid([1.0], np.ones((1, 1, 1))), None, np.zeros((1, 1)))


class GridTruth:
    """Wraps fixed survival curves on a grid as a truth oracle."""

    def __init__(self, surv):
        self.surv = surv

    def __call__(self, x, t):
        n, e, g = self.surv.shape
        vals = torch.as_tensor(self.surv.transpose(0, 2, 1).reshape(n * g, e))
        return torch.log(vals), None


@given(st.integers(0, 10_000))
def test_survival_l1_is_a_metric(seed):
    r = np.random.default_rng(seed)
    grid = uniform_grid(3.0, 200)
    a, b, c = (np.sort(r.uniform(0.01, 1, (4, 2, 200)), axis=-1)[..., ::-1].copy() for _ in range(3))
    x = np.zeros((4, 1))

    def d(p, q):
        return survival_l1(PredictionGrid(grid, p), GridTruth(q), x, 3.0)

    assert np.allclose(d(a, b), d(b, a), atol=1e-12)
    assert np.all(d(a, c) <= d(a, b) + d(b, c) + 1e-12)
    assert np.all(d(a, a) <= 1e-12)  # exp(log v) round trip inside the oracle wrapper


# ------------------------------------------------------------------ C-td


def test_ctd_perfect_ordering(rng):
    t = rng.exponential(1, 500)
    e = rng.integers(0, 3, 500)
    assert ctd_index(-t, None, t, e, 1) == 1.0


def test_ctd_random_scores():
    r = np.random.default_rng(0)
    t = r.exponential(1, 4000)
    e = r.integers(0, 2, 4000)
    assert abs(ctd_index(r.uniform(size=4000), None, t, e, 1) - 0.5) <= 0.02


def test_ctd_all_ties(rng):
    t = rng.exponential(1, 100)
    assert ctd_index(np.ones(100), None, t, np.ones(100, dtype=int), 1) == 0.5


def test_ctd_no_comparable_pairs():
    with pytest.raises(ValueError):
        ctd_index(np.ones(3), None, np.array([1.0, 2.0, 3.0]), np.array([0, 0, 2]), 1)


def test_ctd_uses_score_at_subject_time():
    # subject 0 fails at t=1; the grid column at t=1 decides the comparison
    scores = np.array([[0.1, 0.9], [0.5, 0.5]])
    grid = np.array([0.5, 1.0])
    assert ctd_index(scores, grid, np.array([1.0, 2.0]), np.array([1, 0]), 1) == 1.0
    assert ctd_index(scores, grid, np.array([0.7, 2.0]), np.array([1, 0]), 1) == 0.0


@given(st.integers(0, 10_000))
def test_ctd_invariant_to_monotone_transform(seed):
    r = np.random.default_rng(seed)
    cif = r.uniform(0, 1, (60, 5))
    grid = np.linspace(0.2, 2, 5)
    t = r.exponential(1, 60)
    e = r.integers(0, 2, 60)
    e[0] = 1
    t[0] = t.min() / 2
    assert ctd_index(cif, grid, t, e, 1) == ctd_index(cif**2, grid, t, e, 1)


# ------------------------------------------------------------------ IBS and KM


def test_km_examples():
    t = np.array([0.5, 1.0, 2.0, 3.0])
    g = km_censoring(t, np.zeros(4, dtype=int))
    assert np.allclose(g([0.4, 0.5, 1.5, 3.0]), [1.0, 0.75, 0.5, 0.0])
    g = km_censoring(t, np.ones(4, dtype=int))
    assert np.all(g(np.linspace(0, 5, 11)) == 1.0)
    g = km_censoring(np.array([1.0, 1.0, 2.0, 2.0]), np.array([0, 0, 1, 1]))
    assert g(1.5) == 0.5 and g(0.0) == 1.0 and g.left(1.0) == 1.0


@given(st.lists(st.tuples(st.floats(0.01, 10), st.integers(0, 2)), min_size=1, max_size=40))
def test_km_nonincreasing_right_continuous(rows):
    t = np.array([r[0] for r in rows])
    e = np.array([r[1] for r in rows])
    g = km_censoring(t, e)
    grid = np.linspace(0, 11, 200)
    v = g(grid)
    assert v[0] == 1.0 and np.all(np.diff(v) <= 0) and np.all(v >= 0)
    for jt in g.times:
        assert g(jt) == g(jt + 1e-12) and g.left(jt) >= g(jt)


def test_ibs_constant_half():
    r = np.random.default_rng(1)
    t = r.exponential(1, 300)
    grid = np.quantile(t, np.linspace(0.05, 0.95, 30))
    score, skipped = ibs(np.full((300, 30), 0.5), grid, t, np.ones(300, dtype=int), 1)
    assert score == pytest.approx(0.25, abs=1e-12) and skipped == 0


def test_ibs_perfect_step_prediction():
    r = np.random.default_rng(2)
    t = r.exponential(1, 300)
    grid = np.linspace(0.01, t.max() * 0.99, 50)
    surv = (t[:, None] > grid[None, :]).astype(float)
    score, _ = ibs(surv, grid, t, np.ones(300, dtype=int), 1)
    assert score < 1e-3


def test_ibs_unit_censoring_weights_equal_plain_brier():
    r = np.random.default_rng(3)
    t = r.exponential(1, 200)
    e = r.integers(0, 3, 200)
    s = r.uniform(0, 1, (200, 20))
    grid = np.linspace(0.05, 2.0, 20)
    plain = []
    for j, tj in enumerate(grid):
        died = (t <= tj) & (e == 1)
        alive = t > tj
        plain.append(np.mean(np.where(died, s[:, j] ** 2, 0) + np.where(alive, (1 - s[:, j]) ** 2, 0)))
    expected = np.trapezoid(plain, grid) / (grid[-1] - grid[0])
    one = StepFunction(np.array([]), np.array([]))
    assert ibs(s, grid, t, e, 1)[0] == expected
    assert ibs(s, grid, t, e, 1, g_hat=one)[0] == expected


def test_ibs_skips_empty_risk_sets():
    t = np.array([0.5, 1.0])
    score, skipped = ibs(np.full((2, 3), 0.5), np.array([0.2, 0.7, 5.0]), t, np.array([1, 1]), 1)
    assert skipped == 1 and score == pytest.approx(0.25)


# ------------------------------------------------------------------ grids and reports


def test_quantile_grid():
    t = np.random.default_rng(0).exponential(1, 1000)
    g = quantile_grid(t, 100)
    assert g.size == 100 and g[-1] == t.max() and np.all(np.diff(g) > 0) and g[0] > 0


def test_prediction_grid_validation():
    with pytest.raises(ValueError):
        PredictionGrid([1.0, 1.0])
    with pytest.raises(ValueError):
        PredictionGrid([1.0, 2.0], np.ones((2, 2)))


def test_evaluate_report_fields():
    ds = generate_synthetic(default_spec(n=400, seed=0))
    grid = quantile_grid(ds.time, 20)
    pred = predict(IndependentCopula(4), ds.truth, ds.x, grid)
    rep = evaluate(pred, ds, km_censoring(ds.time, ds.event), ds.truth)
    assert set(rep["events"]) == {"1", "2", "3"}
    for r in rep["events"].values():
        assert 0 <= r["ctd"] <= 1 and r["ibs"] >= 0 and r["survival_l1"] < 0.02
