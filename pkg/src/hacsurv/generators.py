"""Archimedean generators: parametric families, learnable Laplace-transform
generators and subordinator-composed inner generators.

All generator math runs on float64 torch tensors and is expressed in log
space (``log phi``, ``log(-phi')``, ``log phi''``) so that tail values do not
underflow inside likelihoods. The module-level functions :func:`phi`,
:func:`phi_derivs`, :func:`phi_inverse` and :func:`laplace_exponent` accept
plain floats or numpy arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .roots import ConvergenceError, newton_bisect

DTYPE = torch.float64
CLAMP_EPS = 1e-10

__all__ = [
    "DTYPE",
    "CLAMP_EPS",
    "DomainError",
    "ConvergenceError",
    "Generator",
    "ParametricGenerator",
    "LaplaceMixture",
    "AtomGenerator",
    "EmpiricalGenerator",
    "NestedGenerator",
    "SubordinatorGenerator",
    "NestedParametric",
    "phi",
    "phi_derivs",
    "phi_inverse",
    "newton_inverse",
    "laplace_exponent",
    "check_nesting",
    "NestingReport",
    "generator_from_dict",
]


class DomainError(ValueError):
    pass


def _t(x) -> torch.Tensor:
    return torch.as_tensor(x, dtype=DTYPE)


class Generator(nn.Module):
    """Base class. Subclasses implement the three log-derivative maps and ``inverse``."""

    def log_phi(self, x: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    def log_neg_dphi(self, x: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    def log_d2phi(self, x: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    def inverse(self, u: torch.Tensor) -> torch.Tensor:
        """phi^{-1}(u) for u in [0, 1]; u = 0 maps to +inf."""
        return newton_inverse(self, u)

    def phi(self, x: torch.Tensor) -> torch.Tensor:
        return torch.exp(self.log_phi(x))

    def to_dict(self) -> dict:
        raise NotImplementedError


def newton_inverse(g: Generator, u: torch.Tensor, max_doublings: int = 200) -> torch.Tensor:
    """Invert a generator by safeguarded Newton on ``log phi(x) = log u``.

    ``log phi`` is convex and decreasing for every Laplace transform, so Newton
    started at the left end of the bracket approaches the root monotonically.
    The returned tensor is differentiable w.r.t. ``u`` and the generator
    parameters through one Newton step taken from the detached root.
    """
    u = _t(u)
    log_u = torch.log(u)
    with torch.no_grad():
        lu = log_u.detach()
        interior = (lu < 0) & torch.isfinite(lu)
        target = torch.where(interior, lu, torch.full_like(lu, -1.0))
        hi = torch.ones_like(target)
        for _ in range(max_doublings):
            short = g.log_phi(hi) > target
            if not bool(short.any()):
                break
            hi = torch.where(short, 2.0 * hi, hi)
        else:
            raise ConvergenceError("could not bracket generator inverse", float("nan"), -1)

        def fn(x):
            lp = g.log_phi(x)
            return lp - target, -torch.exp(g.log_neg_dphi(x) - lp)

        lo = torch.zeros_like(target)
        root = newton_bisect(fn, lo, hi, increasing=False, x0=lo)
        root = torch.where(interior, root, torch.zeros_like(root))
        root = torch.where(lu == -math.inf, torch.full_like(root, math.inf), root)
    return _implicit_step(g, u, log_u, root, interior)


def _implicit_step(g: Generator, u, log_u, root, interior):
    """Attach gradients to a detached root via one Newton step on log phi(x) = log u."""
    if not (torch.is_grad_enabled() and (u.requires_grad or any(p.requires_grad for p in g.parameters()))):
        return root
    safe = torch.where(interior, root, torch.ones_like(root))
    lp = g.log_phi(safe)
    slope = torch.exp(g.log_neg_dphi(safe) - lp)
    stepped = safe + (lp - torch.where(interior, log_u, lp.detach())) / slope
    return torch.where(interior, stepped, root)


# --------------------------------------------------------------------------- parametric


_FAMILIES = ("independence", "clayton", "frank", "gumbel")


class ParametricGenerator(Generator):
    """Independence, Clayton, Frank or Gumbel generator with a fixed parameter."""

    def __init__(self, family: str, theta: float | None = None):
        super().__init__()
        family = family.lower()
        if family not in _FAMILIES:
            raise ValueError(f"unknown family {family!r}")
        if family == "independence":
            theta = None
        elif theta is None:
            raise ValueError(f"{family} needs a theta")
        else:
            theta = float(theta)
            if family == "clayton" and not theta > 0:
                raise DomainError("Clayton requires theta > 0")
            if family == "frank" and theta == 0:
                raise DomainError("Frank requires theta != 0")
            if family == "gumbel" and not theta >= 1:
                raise DomainError("Gumbel requires theta >= 1")
        self.family = family
        self.theta = theta

    def __repr__(self) -> str:
        return f"ParametricGenerator({self.family!r}, theta={self.theta})"

    def log_phi(self, x):
        x = _t(x)
        th = self.theta
        if self.family == "independence":
            return -x
        if self.family == "clayton":
            return -torch.log1p(x) / th
        if self.family == "frank":
            c = -math.expm1(-th)
            return torch.log(-torch.log1p(-c * torch.exp(-x)) / th)
        a = 1.0 / th
        return -(x**a)

    def log_neg_dphi(self, x):
        x = _t(x)
        th = self.theta
        if self.family == "independence":
            return -x
        if self.family == "clayton":
            return -math.log(th) - (1.0 / th + 1.0) * torch.log1p(x)
        if self.family == "frank":
            c = -math.expm1(-th)
            return math.log(c / th) - x - torch.log1p(-c * torch.exp(-x))
        a = 1.0 / th
        return math.log(a) + (a - 1.0) * torch.log(x) - x**a

    def log_d2phi(self, x):
        x = _t(x)
        th = self.theta
        if self.family == "independence":
            return -x
        if self.family == "clayton":
            a = 1.0 / th
            return math.log(a * (a + 1.0)) - (a + 2.0) * torch.log1p(x)
        if self.family == "frank":
            c = -math.expm1(-th)
            return math.log(c / th) - x - 2.0 * torch.log1p(-c * torch.exp(-x))
        a = 1.0 / th
        return -(x**a) + math.log(a) + (a - 2.0) * torch.log(x) + torch.log(a * x**a + 1.0 - a)

    def inverse(self, u):
        u = _t(u)
        th = self.theta
        if self.family == "independence":
            return -torch.log(u)
        if self.family == "clayton":
            return torch.expm1(-th * torch.log(u))
        if self.family == "frank":
            return -torch.log(torch.expm1(-th * u) / math.expm1(-th))
        return (-torch.log(u)) ** th

    def to_dict(self) -> dict:
        return {"kind": "parametric", "family": self.family, "theta": self.theta}


# --------------------------------------------------------------------------- Laplace mixtures


class LaplaceMixture(Generator):
    """phi(x) = mean_l exp(-M_l x) for positive atoms M_l."""

    def log_atoms(self) -> torch.Tensor:
        raise NotImplementedError

    def atoms(self) -> torch.Tensor:
        return torch.exp(self.log_atoms())

    def _lse(self, x, power: int):
        x = _t(x)
        a = self.log_atoms()
        m = torch.exp(a)
        z = -m * x.unsqueeze(-1)
        if power:
            z = z + power * a
        # 0 * inf -> nan when x is inf; the limit is -inf
        if bool(torch.isinf(x).any()):
            z = torch.nan_to_num(z, nan=-math.inf)
        return torch.logsumexp(z, dim=-1) - math.log(a.shape[0])

    def log_phi(self, x):
        return self._lse(x, 0)

    def log_neg_dphi(self, x):
        return self._lse(x, 1)

    def log_d2phi(self, x):
        return self._lse(x, 2)

    def inverse(self, u):
        """Newton on z = log x inside an explicit bracket.

        Jensen gives phi(x) >= exp(-mean(M) x) and every term is at most
        exp(-min(M) x), so the root lies in [-log u / mean(M), -log u / min(M)].
        """
        u = _t(u)
        log_u = torch.log(u)
        with torch.no_grad():
            lu = log_u.detach()
            interior = (lu < 0) & torch.isfinite(lu)
            target = torch.where(interior, lu, torch.full_like(lu, -1.0))
            a = self.log_atoms().detach()
            m_mean = float(torch.logsumexp(a, 0)) - math.log(a.shape[0])
            lo = torch.log(-target) - m_mean
            hi = torch.log(-target) - float(a.min())

            n_log = math.log(a.shape[0])

            def fn(z):
                # log phi and log -phi' share the exponent table
                x = torch.exp(z)
                e = -torch.exp(a) * x.unsqueeze(-1)
                lp = torch.logsumexp(e, dim=-1) - n_log
                ld = torch.logsumexp(e + a, dim=-1) - n_log
                return lp - target, -x * torch.exp(ld - lp)

            z = newton_bisect(fn, lo, hi, increasing=False, x0=0.5 * (lo + hi))
            root = torch.where(interior, torch.exp(z), torch.zeros_like(z))
            root = torch.where(lu == -math.inf, torch.full_like(root, math.inf), root)
        return _implicit_step(self, u, log_u, root, interior)


class AtomGenerator(LaplaceMixture):
    """Laplace mixture over a fixed list of atoms (no trainable parameters)."""

    def __init__(self, atoms):
        super().__init__()
        atoms = _t(atoms).flatten()
        if not bool((atoms > 0).all()):
            raise DomainError("atoms must be positive")
        self.register_buffer("_log_atoms", torch.log(atoms))

    def log_atoms(self):
        return self._log_atoms

    def to_dict(self) -> dict:
        return {"kind": "atoms", "log_atoms": self._log_atoms.tolist()}


class EmpiricalGenerator(LaplaceMixture):
    """Learnable generator: atoms M_l = exp(G(eps_l)) for a fixed noise matrix eps.

    Parameters
    ----------
    n_atoms : int
        Number of atoms L.
    hidden : int
        Width of each hidden tanh layer.
    n_layers : int
        Number of hidden layers.
    noise_dim : int
        Columns of the standard-normal noise matrix.
    seed : int
        Seeds both the noise matrix and the network initialisation.
    """

    def __init__(self, n_atoms: int = 512, hidden: int = 64, n_layers: int = 2, noise_dim: int = 2, seed: int = 0):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        self.arch = {"n_atoms": n_atoms, "hidden": hidden, "n_layers": n_layers, "noise_dim": noise_dim}
        self.register_buffer("eps", torch.randn(n_atoms, noise_dim, generator=gen, dtype=DTYPE))
        layers: list[nn.Module] = []
        width = noise_dim
        for _ in range(n_layers):
            layers += [nn.Linear(width, hidden, dtype=DTYPE), nn.Tanh()]
            width = hidden
        layers.append(nn.Linear(width, 1, dtype=DTYPE))
        self.net = nn.Sequential(*layers)
        with torch.no_grad():
            for mod in self.net:
                if isinstance(mod, nn.Linear):
                    bound = 1.0 / math.sqrt(mod.in_features)
                    mod.weight.copy_((torch.rand(mod.weight.shape, generator=gen, dtype=DTYPE) * 2 - 1) * bound)
                    mod.bias.copy_((torch.rand(mod.bias.shape, generator=gen, dtype=DTYPE) * 2 - 1) * bound)

    def log_atoms(self):
        # exp output activation: the raw network output is log M
        return self.net(self.eps).squeeze(-1)

    def to_dict(self) -> dict:
        return {
            "kind": "empirical",
            "arch": dict(self.arch),
            "eps": self.eps.tolist(),
            "params": {k: v.tolist() for k, v in self.net.state_dict().items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EmpiricalGenerator":
        g = cls(**d["arch"])
        with torch.no_grad():
            g.eps.copy_(_t(d["eps"]))
            g.net.load_state_dict({k: _t(v) for k, v in d["params"].items()})
        return g


# --------------------------------------------------------------------------- nested (inner) generators


class NestedGenerator(Generator):
    """phi_j = phi_0 o psi_j for an increasing concave exponent psi_j with psi_j(0) = 0.

    The outer generator is held by reference and is not registered as a
    submodule, so ``parameters()`` yields only the inner parameters.
    """

    def __init__(self, outer: Generator):
        super().__init__()
        self._outer = (outer,)

    @property
    def outer(self) -> Generator:
        return self._outer[0]

    def psi(self, x):
        raise NotImplementedError

    def log_dpsi(self, x):
        raise NotImplementedError

    def log_neg_d2psi(self, x):
        raise NotImplementedError

    def psi_inverse(self, y):
        raise NotImplementedError

    def log_phi(self, x):
        return self.outer.log_phi(self.psi(x))

    def log_neg_dphi(self, x):
        return self.outer.log_neg_dphi(self.psi(x)) + self.log_dpsi(x)

    def log_d2phi(self, x):
        p = self.psi(x)
        ld = self.log_dpsi(x)
        return torch.logaddexp(
            self.outer.log_d2phi(p) + 2.0 * ld,
            self.outer.log_neg_dphi(p) + self.log_neg_d2psi(x),
        )

    def inverse(self, u):
        return self.psi_inverse(self.outer.inverse(u))


class SubordinatorGenerator(NestedGenerator):
    """Inner generator built from a compound-Poisson subordinator.

    psi(x) = mu x + beta (1 - phi_M(x)) with drift mu, jump intensity beta and
    jump sizes M described by a Laplace mixture. mu and beta are stored as logs.
    """

    def __init__(self, outer: Generator, jumps: LaplaceMixture, mu: float = 1.0, beta: float = 1.0):
        super().__init__(outer)
        if not (mu > 0 and beta >= 0):
            raise DomainError("mu must be positive and beta nonnegative")
        self.jumps = jumps
        self.log_mu = nn.Parameter(torch.tensor(math.log(mu), dtype=DTYPE))
        # beta = 0 (pure drift) is stored as log 0 = -inf
        self.log_beta = nn.Parameter(torch.tensor(math.log(beta) if beta > 0 else -math.inf, dtype=DTYPE))

    @property
    def mu(self) -> float:
        return float(torch.exp(self.log_mu.detach()))

    @property
    def beta(self) -> float:
        return float(torch.exp(self.log_beta.detach()))

    def psi(self, x):
        x = _t(x)
        tail = -torch.expm1(self.jumps.log_phi(x))
        return torch.exp(self.log_mu) * x + torch.exp(self.log_beta) * tail

    def log_dpsi(self, x):
        return torch.logaddexp(self.log_mu.expand_as(_t(x)), self.log_beta + self.jumps.log_neg_dphi(x))

    def log_neg_d2psi(self, x):
        return self.log_beta + self.jumps.log_d2phi(x)

    def psi_inverse(self, y):
        y = _t(y)
        finite = torch.isfinite(y)
        with torch.no_grad():
            yd = torch.where(finite, y.detach(), torch.ones_like(y))
            slope0 = float(torch.exp(self.log_dpsi(torch.zeros(()))))
            lo = yd / slope0
            hi = yd / self.mu

            def fn(x):
                return self.psi(x) - yd, torch.exp(self.log_dpsi(x))

            root = newton_bisect(fn, lo, hi, increasing=True, x0=lo)
        if torch.is_grad_enabled() and (y.requires_grad or self.log_mu.requires_grad):
            y_safe = torch.where(finite, y, torch.ones_like(y))
            root = root + (y_safe - self.psi(root)) / torch.exp(self.log_dpsi(root))
        return torch.where(finite, root, torch.full_like(root, math.inf))

    def to_dict(self) -> dict:
        return {
            "kind": "subordinator",
            "log_mu": float(self.log_mu.detach()),
            "log_beta": float(self.log_beta.detach()),
            "mu": self.mu,
            "beta": self.beta,
            "jumps": self.jumps.to_dict(),
        }


class NestedParametric(NestedGenerator):
    """Same-family nesting for Clayton or Gumbel, with closed-form exponent.

    Clayton(theta0) outer, Clayton(theta) inner: psi(x) = (1+x)^a - 1, a = theta0/theta.
    Gumbel: psi(x) = x^a. Valid nesting requires a <= 1.
    """

    def __init__(self, outer: ParametricGenerator, theta: float):
        super().__init__(outer)
        if not isinstance(outer, ParametricGenerator) or outer.family not in ("clayton", "gumbel"):
            raise DomainError("closed-form nesting only for Clayton or Gumbel outer generators")
        self.family = outer.family
        self.theta = float(theta)
        self.a = outer.theta / self.theta
        if self.a > 1.0:
            raise DomainError(
                f"nesting condition violated: inner theta {theta} weaker than outer theta {outer.theta}"
            )
        self.standalone = ParametricGenerator(self.family, self.theta)

    def psi(self, x):
        x = _t(x)
        if self.family == "clayton":
            return torch.expm1(self.a * torch.log1p(x))
        return x**self.a

    def log_dpsi(self, x):
        x = _t(x)
        base = torch.log1p(x) if self.family == "clayton" else torch.log(x)
        return math.log(self.a) + (self.a - 1.0) * base

    def log_neg_d2psi(self, x):
        x = _t(x)
        if self.a == 1.0:
            return torch.full_like(x, -math.inf)
        base = torch.log1p(x) if self.family == "clayton" else torch.log(x)
        return math.log(self.a * (1.0 - self.a)) + (self.a - 2.0) * base

    def psi_inverse(self, y):
        y = _t(y)
        if self.family == "clayton":
            return torch.expm1(torch.log1p(y) / self.a)
        return y ** (1.0 / self.a)

    # standalone values coincide with the inner family; use them directly for accuracy
    def log_phi(self, x):
        return self.standalone.log_phi(x)

    def log_neg_dphi(self, x):
        return self.standalone.log_neg_dphi(x)

    def log_d2phi(self, x):
        return self.standalone.log_d2phi(x)

    def inverse(self, u):
        return self.standalone.inverse(u)

    def to_dict(self) -> dict:
        return {"kind": "nested_parametric", "family": self.family, "theta": self.theta}


def generator_from_dict(d: dict, outer: Generator | None = None) -> Generator:
    kind = d["kind"]
    if kind == "parametric":
        return ParametricGenerator(d["family"], d["theta"])
    if kind == "atoms":
        return AtomGenerator(np.exp(np.asarray(d["log_atoms"], dtype=float)))
    if kind == "empirical":
        return EmpiricalGenerator.from_dict(d)
    if outer is None:
        raise ValueError(f"{kind} generator needs its outer generator")
    if kind == "subordinator":
        jumps = generator_from_dict(d["jumps"])
        g = SubordinatorGenerator(outer, jumps)
        with torch.no_grad():
            g.log_mu.fill_(d["log_mu"])
            g.log_beta.fill_(d["log_beta"])
        return g
    if kind == "nested_parametric":
        return NestedParametric(outer, d["theta"])
    raise ValueError(f"unknown generator kind {kind!r}")


# --------------------------------------------------------------------------- numpy-facing API


def _out(t: torch.Tensor, like):
    arr = t.detach().numpy()
    return float(arr) if np.ndim(like) == 0 else arr


def _check_x(x):
    xa = np.asarray(x, dtype=float)
    if np.any(xa < 0) or np.any(np.isnan(xa)):
        raise DomainError("generator argument must be nonnegative")
    return xa


def phi(g: Generator, x):
    """Generator value phi(x) for x >= 0."""
    xa = _check_x(x)
    with torch.no_grad():
        return _out(g.phi(_t(xa)), x)


def phi_derivs(g: Generator, x):
    """Return (phi, phi', phi'') at x >= 0."""
    xa = _check_x(x)
    with torch.no_grad():
        xt = _t(xa)
        return (
            _out(torch.exp(g.log_phi(xt)), x),
            _out(-torch.exp(g.log_neg_dphi(xt)), x),
            _out(torch.exp(g.log_d2phi(xt)), x),
        )


def phi_inverse(g: Generator, u, tol: float = 1e-10):
    """phi^{-1}(u) for u in (0, 1]; verifies |phi(x) - u| <= tol."""
    ua = np.asarray(u, dtype=float)
    if np.any(~(ua > 0)) or np.any(ua > 1):
        raise DomainError("phi_inverse requires u in (0, 1]")
    with torch.no_grad():
        x = g.inverse(_t(ua))
        resid = (g.phi(x) - _t(ua)).abs()
    if bool((resid > tol).any()):
        i = int(torch.argmax(resid))
        raise ConvergenceError("generator inverse off tolerance", float(resid.flatten()[i]), i)
    return _out(x, u)


def laplace_exponent(s: NestedGenerator, x):
    """psi(x) of an inner generator."""
    xa = _check_x(x)
    with torch.no_grad():
        return _out(s.psi(_t(xa)), x)


@dataclass
class NestingReport:
    passed: bool
    worst_violation: float
    detail: str


def check_nesting(outer: Generator, inner: NestedGenerator, grid) -> NestingReport:
    """Check h = phi0^{-1} o phi_j against psi_j and the sign pattern of h', h'', h'''.

    The identity check is relative to max(1, |psi_j(x)|) at tolerance 1e-8.
    Derivatives use forward divided differences, whose values equal the
    derivative at an interior point, so the sign check is exact up to roundoff.
    """
    if inner.outer is not outer:
        raise ValueError("inner generator was not built on this outer generator")
    grid = _check_x(np.atleast_1d(grid))
    worst = 0.0
    detail = "ok"
    with torch.no_grad():
        xs = _t(grid)
        h = outer.inverse(inner.phi(xs))
        psi = inner.psi(xs)
        # relative to max(1, psi): once phi_j(x) is subnormal only ~1e-9 relative precision survives
        diff = (h - psi).abs() / psi.abs().clamp_min(1.0)
        diff = torch.where(torch.isfinite(h) & torch.isfinite(psi), diff, torch.zeros_like(diff))
        worst_id = float(diff.max())
        if worst_id > 1e-8:
            return NestingReport(False, worst_id, "phi0^{-1}(phi_j(x)) differs from psi_j(x)")
        for x in grid:
            d = 0.05 * max(1.0, float(x))
            pts = _t([x, x + d, x + 2 * d, x + 3 * d])
            v = inner.psi(pts).numpy()
            d1 = (v[1] - v[0]) / d
            d2 = (v[2] - 2 * v[1] + v[0]) / d**2
            d3 = (v[3] - 3 * v[2] + 3 * v[1] - v[0]) / d**3
            for val, sign, name in ((d1, 1, "h'"), (d2, -1, "h''"), (d3, 1, "h'''")):
                viol = max(0.0, -sign * val)
                if viol > worst:
                    worst, detail = viol, f"{name} has wrong sign at x={x}"
    return NestingReport(worst <= 1e-6, worst, detail if worst > 1e-6 else "ok")
