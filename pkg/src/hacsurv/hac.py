"""Copula models over generator trees.

Three kinds share one interface: :class:`IndependentCopula`,
:class:`SymmetricCopula` (one generator over all coordinates) and
:class:`HierarchicalCopula` (an outer generator with optional inner groups
whose generators are nested in it). Internally everything is computed in log
space on torch tensors; :func:`cdf`, :func:`partial` and
:func:`bivariate_density` are the numpy-facing entry points.

For a hierarchical model with outer generator phi0 and inner exponents psi_j
(phi_j = phi0 o psi_j), write x_i = phi0^{-1}(u_i), y_i = psi_j^{-1}(x_i),
s_j = sum of y over group j and s0 = sum of outer-leaf x plus sum_j psi_j(s_j).
Then C = phi0(s0) and, for a leaf k in group j,

    log dC/du_k = log(-phi0'(s0)) - log(-phi0'(x_k)) + log psi_j'(s_j) - log psi_j'(y_k)

(the inner-group terms vanish for outer leaves).
"""

from __future__ import annotations

import math

import numpy as np
import torch
from scipy import integrate, stats
from torch import nn

from .generators import (
    CLAMP_EPS,
    DTYPE,
    DomainError,
    Generator,
    LaplaceMixture,
    NestedGenerator,
    ParametricGenerator,
    check_nesting,
    generator_from_dict,
)

__all__ = [
    "CopulaModel",
    "IndependentCopula",
    "SymmetricCopula",
    "HierarchicalCopula",
    "cdf",
    "partial",
    "bivariate_density",
    "log_bivariate_density",
    "kendall_tau",
    "kendall_tau_exact",
    "empirical_kendall_tau",
    "copula_from_dict",
]


def _leave_one_out(t: torch.Tensor) -> torch.Tensor:
    """Column c holds the sum of every other column."""
    d = t.shape[-1]
    if d == 1:
        return torch.zeros_like(t)
    return torch.stack([torch.cat([t[..., :c], t[..., c + 1 :]], dim=-1).sum(-1) for c in range(d)], dim=-1)


class CopulaModel(nn.Module):
    dim: int

    def log_cdf_t(self, u: torch.Tensor) -> torch.Tensor:
        """log C(u) for an (n, dim) tensor."""
        raise NotImplementedError

    def log_partials_t(self, u: torch.Tensor) -> torch.Tensor:
        """log dC/du_k for every k; returns (n, dim)."""
        raise NotImplementedError

    def log_cdf_drop_t(self, u: torch.Tensor) -> torch.Tensor:
        """Column k holds log C(u) with u_k replaced by 1; returns (n, dim)."""
        cols = []
        for k in range(self.dim):
            v = u.clone()
            v[..., k] = 1.0
            cols.append(self.log_cdf_t(v))
        return torch.stack(cols, dim=-1)

    def to_dict(self) -> dict:
        raise NotImplementedError


class IndependentCopula(CopulaModel):
    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim

    def log_cdf_t(self, u):
        return torch.log(u).sum(-1)

    def log_partials_t(self, u):
        logs = torch.log(u)
        return logs.sum(-1, keepdim=True) - logs

    log_cdf_drop_t = log_partials_t

    def to_dict(self):
        return {"kind": "independent", "dim": self.dim}


class SymmetricCopula(CopulaModel):
    """C(u) = phi(sum_i phi^{-1}(u_i))."""

    def __init__(self, generator: Generator, dim: int):
        super().__init__()
        self.generator = generator
        self.dim = dim

    def log_cdf_t(self, u):
        x = self.generator.inverse(u)
        return self.generator.log_phi(x.sum(-1))

    def log_partials_t(self, u):
        g = self.generator
        x = g.inverse(u)
        s = x.sum(-1, keepdim=True)
        return g.log_neg_dphi(s) - g.log_neg_dphi(x)

    def log_cdf_drop_t(self, u):
        x = self.generator.inverse(u)
        return self.generator.log_phi(_leave_one_out(x))

    def to_dict(self):
        return {"kind": "symmetric", "dim": self.dim, "generator": self.generator.to_dict()}


class HierarchicalCopula(CopulaModel):
    """Two-level nested Archimedean copula.

    Parameters
    ----------
    outer : Generator
        Root generator phi0.
    outer_leaves : list of int
        Coordinates attached directly to the root.
    groups : list of (NestedGenerator, list of int)
        Inner generators built on ``outer`` and the coordinates they join.
    """

    def __init__(self, outer: Generator, outer_leaves, groups):
        super().__init__()
        self.outer = outer
        self.outer_leaves = [int(i) for i in outer_leaves]
        self.inner = nn.ModuleList([g for g, _ in groups])
        self.group_leaves = [[int(i) for i in leaves] for _, leaves in groups]
        every = sorted(self.outer_leaves + [i for ls in self.group_leaves for i in ls])
        if every != list(range(len(every))):
            raise ValueError(f"leaves must cover 0..d-1 exactly once, got {every}")
        for g, leaves in zip(self.inner, self.group_leaves):
            if not isinstance(g, NestedGenerator) or g.outer is not outer:
                raise ValueError("inner generators must be nested in the outer generator")
            if len(leaves) < 2:
                raise ValueError("inner groups need at least two leaves")
        self.dim = len(every)

    def _parts(self, u):
        x = self.outer.inverse(u)
        s0 = x[..., self.outer_leaves].sum(-1) if self.outer_leaves else torch.zeros(u.shape[:-1], dtype=DTYPE)
        inner = []
        for g, leaves in zip(self.inner, self.group_leaves):
            y = g.psi_inverse(x[..., leaves])
            s = y.sum(-1)
            s0 = s0 + g.psi(s)
            inner.append((y, s))
        return x, s0, inner

    def log_cdf_t(self, u):
        _, s0, _ = self._parts(u)
        return self.outer.log_phi(s0)

    def log_partials_t(self, u):
        x, s0, inner = self._parts(u)
        out = self.outer.log_neg_dphi(s0).unsqueeze(-1) - self.outer.log_neg_dphi(x)
        cols = [out[..., i] for i in range(self.dim)]
        for g, leaves, (y, s) in zip(self.inner, self.group_leaves, inner):
            extra = g.log_dpsi(s).unsqueeze(-1) - g.log_dpsi(y)
            for c, k in enumerate(leaves):
                cols[k] = cols[k] + extra[..., c]
        return torch.stack(cols, dim=-1)

    def log_cdf_drop_t(self, u):
        # sums are formed without subtraction: one huge term must not swamp the rest
        x, _, inner = self._parts(u)
        terms = [x[..., k] for k in self.outer_leaves]
        terms += [g.psi(s) for g, (_, s) in zip(self.inner, inner)]
        rest = _leave_one_out(torch.stack(terms, dim=-1))
        n_out = len(self.outer_leaves)
        cols = [None] * self.dim
        for c, k in enumerate(self.outer_leaves):
            cols[k] = rest[..., c]
        for j, (g, leaves, (y, _)) in enumerate(zip(self.inner, self.group_leaves, inner)):
            within = _leave_one_out(y)
            for c, k in enumerate(leaves):
                cols[k] = rest[..., n_out + j] + g.psi(within[..., c])
        return self.outer.log_phi(torch.stack(cols, dim=-1))

    def structure(self) -> dict:
        return {"outer_leaves": list(self.outer_leaves), "groups": [list(ls) for ls in self.group_leaves]}

    def check(self, grid=None) -> list:
        grid = np.linspace(0.0, 20.0, 41) if grid is None else grid
        return [check_nesting(self.outer, g, grid) for g in self.inner]

    def to_dict(self):
        return {
            "kind": "hierarchical",
            "dim": self.dim,
            "outer": self.outer.to_dict(),
            "outer_leaves": list(self.outer_leaves),
            "groups": [{"leaves": list(ls), "generator": g.to_dict()} for g, ls in zip(self.inner, self.group_leaves)],
        }


def copula_from_dict(d: dict) -> CopulaModel:
    kind = d["kind"]
    if kind == "independent":
        return IndependentCopula(d["dim"])
    if kind == "symmetric":
        return SymmetricCopula(generator_from_dict(d["generator"]), d["dim"])
    if kind == "hierarchical":
        outer = generator_from_dict(d["outer"])
        groups = [(generator_from_dict(gd["generator"], outer=outer), gd["leaves"]) for gd in d["groups"]]
        return HierarchicalCopula(outer, d["outer_leaves"], groups)
    raise ValueError(f"unknown copula kind {kind!r}")


# --------------------------------------------------------------------------- numpy API


def _as_u(m: CopulaModel, u) -> tuple[torch.Tensor, bool]:
    ua = np.asarray(u, dtype=float)
    single = ua.ndim == 1
    ua = np.atleast_2d(ua)
    if ua.shape[-1] != m.dim:
        raise ValueError(f"dimension mismatch: copula has {m.dim} coordinates, got {ua.shape[-1]}")
    if np.any(np.isnan(ua)) or np.any(ua < 0) or np.any(ua > 1):
        raise DomainError("copula arguments must lie in [0, 1]")
    return torch.as_tensor(ua, dtype=DTYPE), single


def cdf(m: CopulaModel, u):
    """C(u) for a vector or an (n, dim) matrix of points in [0, 1]."""
    ut, single = _as_u(m, u)
    with torch.no_grad():
        out = torch.exp(m.log_cdf_t(ut)).numpy()
    return float(out[0]) if single else out


def partial(m: CopulaModel, u, k: int):
    """dC/du_k; coordinates are clamped into [1e-10, 1] and u_k additionally below 1 - 1e-10."""
    if not 0 <= k < m.dim:
        raise IndexError(f"coordinate {k} out of range for dimension {m.dim}")
    ut, single = _as_u(m, u)
    ut = ut.clamp(min=CLAMP_EPS)
    ut[:, k] = ut[:, k].clamp(max=1 - CLAMP_EPS)
    with torch.no_grad():
        out = torch.exp(m.log_partials_t(ut)[:, k]).numpy()
    return float(out[0]) if single else out


def log_bivariate_density(g: Generator, u: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    x, y = g.inverse(u), g.inverse(v)
    return g.log_d2phi(x + y) - g.log_neg_dphi(x) - g.log_neg_dphi(y)


def bivariate_density(g: Generator, u, v):
    """Density of the bivariate Archimedean copula with generator g on (0, 1)^2."""
    ua, va = np.asarray(u, dtype=float), np.asarray(v, dtype=float)
    for a in (ua, va):
        if np.any(~(a > 0)) or np.any(~(a < 1)):
            raise DomainError("density arguments must lie strictly inside (0, 1)")
    with torch.no_grad():
        out = torch.exp(log_bivariate_density(g, torch.as_tensor(ua, dtype=DTYPE), torch.as_tensor(va, dtype=DTYPE)))
    out = out.numpy()
    return float(out) if np.ndim(out) == 0 else out


# --------------------------------------------------------------------------- Kendall's tau


def empirical_kendall_tau(a, b) -> tuple[float, float]:
    """Sample Kendall tau and its asymptotic standard error.

    The standard error uses the U-statistic projection: with c_i the mean
    concordance sign of point i against all others, var(tau) ~ 4 var(c) / n.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n = a.shape[0]
    tau = float(stats.kendalltau(a, b).statistic)
    ra = stats.rankdata(a, method="ordinal").astype(np.int64) - 1
    rb = stats.rankdata(b, method="ordinal").astype(np.int64) - 1
    # lower-left counts via a Fenwick tree over b-ranks, inserting in a-rank order
    order = np.argsort(ra)
    tree = np.zeros(n + 1, dtype=np.int64)
    lower_left = np.empty(n, dtype=np.int64)
    for i in order:
        r = rb[i]
        s, j = 0, r
        while j > 0:
            s += tree[j]
            j -= j & (-j)
        lower_left[i] = s
        j = r + 1
        while j <= n:
            tree[j] += 1
            j += j & (-j)
    upper_right = (n - 1) - ra - rb + lower_left
    conc = lower_left + upper_right
    c = (2.0 * conc - (n - 1)) / (n - 1)
    se = float(2.0 * np.std(c, ddof=1) / math.sqrt(n))
    return tau, se


def kendall_tau(g: Generator, n_mc: int = 20000, seed: int = 0) -> tuple[float, float]:
    """Monte-Carlo Kendall tau of the bivariate copula of g; returns (tau, standard error)."""
    if n_mc < 1000:
        raise ValueError("n_mc must be at least 1000")
    from .sampling import sample_bivariate

    uv = sample_bivariate(g, n_mc, seed)
    return empirical_kendall_tau(uv[:, 0], uv[:, 1])


def kendall_tau_exact(g: Generator) -> float:
    """tau = 1 - 4 int_0^inf x phi'(x)^2 dx, by quadrature (closed form for atom mixtures)."""
    if isinstance(g, ParametricGenerator):
        th = g.theta
        if g.family == "independence":
            return 0.0
        if g.family == "clayton":
            return th / (th + 2.0)
        if g.family == "gumbel":
            return 1.0 - 1.0 / th
        debye = integrate.quad(lambda t: t / math.expm1(t) if t != 0 else 1.0, 0.0, th)[0] / th
        return 1.0 - 4.0 / th * (1.0 - debye)
    if isinstance(g, LaplaceMixture) and not isinstance(g, NestedGenerator):
        with torch.no_grad():
            m = g.atoms().numpy()
        ss = m[:, None] + m[None, :]
        return float(1.0 - 4.0 * np.mean(np.outer(m, m) / ss**2))

    def integrand(x):
        with torch.no_grad():
            ld = float(g.log_neg_dphi(torch.tensor(x, dtype=DTYPE)))
        return x * math.exp(2.0 * ld)

    val = 0.0
    edges = [0.0, 1e-3, 0.1, 1.0, 10.0, 100.0, math.inf]
    for lo, hi in zip(edges[:-1], edges[1:]):
        val += integrate.quad(integrand, lo, hi, limit=200, epsabs=1e-12, epsrel=1e-10)[0]
    return 1.0 - 4.0 * val
