import json

import numpy as np
import pytest
import torch

from hacsurv.generators import DomainError
from hacsurv.marginals import MonotoneSurvivalNet, WeibullCoxMarginals, density, marginals_from_dict, survival


def net(seed=0, **kw):
    return MonotoneSurvivalNet(2, 3, embed_width=16, head_width=16, mono_width=16, seed=seed, **kw)


def test_weibull_examples():
    m = WeibullCoxMarginals([1.0, 2.0], [1.0, 1.0], [[0.0], [0.0]])
    assert survival(m, 0, 1.0, [0.0]) == pytest.approx(np.exp(-1), rel=1e-14)
    assert survival(m, 1, 0.0, [0.3]) == 1.0
    assert density(m, 0, 0.5, [0.0]) == pytest.approx(np.exp(-0.5), rel=1e-14)
    assert density(m, 1, 1.0, [0.0]) == pytest.approx(2 * np.exp(-1), rel=1e-14)


def test_weibull_closed_form(rng):
    rho, lam, beta = 1.7, 0.8, np.array([0.5, -1.0])
    m = WeibullCoxMarginals([rho], [lam], [beta])
    x = rng.uniform(0, 1, (100, 2))
    t = rng.uniform(0.01, 3, 100)
    lin = np.exp(x @ beta)
    s = np.exp(-((t / lam) ** rho) * lin)
    assert np.allclose(survival(m, 0, t, x), s, rtol=1e-12)
    assert np.allclose(density(m, 0, t, x), s * rho / lam * (t / lam) ** (rho - 1) * lin, rtol=1e-12)


def test_errors():
    m = net()
    with pytest.raises(DomainError):
        survival(m, 0, -1.0, np.zeros(3))
    with pytest.raises(DomainError):
        density(m, 0, 0.0, np.zeros(3))
    with pytest.raises(IndexError):
        survival(m, 2, 1.0, np.zeros(3))
    with pytest.raises(DomainError):
        WeibullCoxMarginals([0.0], [1.0], [[0.0]])


def test_network_monotone_at_init(rng):
    m = net(1)
    x = rng.uniform(0, 1, (100, 3))
    for k in range(2):
        s1, s2 = survival(m, k, 1.0, x), survival(m, k, 2.0, x)
        assert np.all(s2 <= s1)
        assert np.all((s1 > 0) & (s1 < 1))


def test_network_density_matches_finite_difference(rng):
    m = net(2, time_scale=2.0)
    x = rng.uniform(0, 1, (100, 3))
    t = rng.uniform(0.05, 5, 100)
    h = 1e-4 * np.maximum(t, 1)
    for k in range(2):
        fd = -(survival(m, k, t + h, x) - survival(m, k, t - h, x)) / (2 * h)
        f = density(m, k, t, x)
        assert np.all(f >= 0)
        assert np.max(np.abs(f - fd) / fd) < 1e-3


@pytest.mark.parametrize("log_time", [True, False])
def test_network_density_matches_autograd(log_time, rng):
    m = net(3, log_time=log_time)
    x = torch.as_tensor(rng.uniform(0, 1, (40, 3)))
    t = torch.tensor(rng.uniform(0.1, 3, 40), requires_grad=True)
    log_s, log_f = m(x, t)
    (ds,) = torch.autograd.grad(torch.exp(log_s[:, 1]).sum(), t)
    assert torch.allclose(torch.exp(log_f[:, 1]), -ds, rtol=1e-10)


def test_monotone_sweep_after_training(rng):
    m = net(4)
    x = torch.as_tensor(rng.uniform(0, 1, (256, 3)))
    t = torch.as_tensor(rng.exponential(1.0, 256))
    opt = torch.optim.AdamW(m.parameters(), lr=0.05)
    for _ in range(30):
        opt.zero_grad()
        _, log_f = m(x, t)
        (-log_f.sum()).backward()
        opt.step()
        # every weight downstream of t is a square, so the effective weights are nonnegative
        assert bool((m.mono_vt**2 >= 0).all()) and all(bool((v**2 >= 0).all()) for v in m.mono_v)
    grid = np.linspace(0.0, 5.0, 100)
    for xi in rng.uniform(0, 1, (50, 3)):
        for k in range(2):
            s = survival(m, k, grid, xi)
            assert np.all(np.diff(s) <= 0)


def test_normalization_pins_time_zero(rng):
    m = net(5, normalize=True, log_time=False)
    x = rng.uniform(0, 1, (10, 3))
    assert np.allclose(survival(m, 0, 0.0, x), 1.0, atol=1e-12)
    assert not np.allclose(survival(net(5, log_time=False), 0, 0.0, x), 1.0)


def test_substitutable_contract(rng):
    x = torch.as_tensor(rng.uniform(0, 1, (7, 3)))
    t = torch.as_tensor(rng.uniform(0.1, 2, 7))
    for m in (net(), WeibullCoxMarginals([1.0, 2.0], [1.0, 1.5], np.zeros((2, 3)))):
        log_s, log_f = m(x, t)
        assert log_s.shape == log_f.shape == (7, 2)
        assert bool((log_s <= 0).all())


@pytest.mark.parametrize("m", [net(6, time_scale=3.0), WeibullCoxMarginals([1.2], [0.5], [[0.1, 0.2, 0.3]])], ids=["net", "weibull"])
def test_json_round_trip(m, rng):
    m2 = marginals_from_dict(json.loads(json.dumps(m.to_dict())))
    x = rng.uniform(0, 1, (20, 3))
    t = rng.uniform(0.1, 2, 20)
    assert np.array_equal(survival(m, 0, t, x), survival(m2, 0, t, x))
    assert np.array_equal(density(m, 0, t, x), density(m2, 0, t, x))


def test_seeded_initialisation():
    a, b = net(7), net(7)
    assert all(torch.equal(p, q) for p, q in zip(a.parameters(), b.parameters()))
