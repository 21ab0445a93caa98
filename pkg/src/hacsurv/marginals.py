"""Conditional marginal survival models S_k(t | x) with densities.

Both models return ``(log S, log f)`` for every event at once from
``forward(x, t)`` so they can be swapped inside the likelihood.
"""

from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .generators import DTYPE, DomainError

__all__ = ["MarginalModel", "MonotoneSurvivalNet", "WeibullCoxMarginals", "survival", "density", "marginals_from_dict"]


class MarginalModel(nn.Module):
    n_events: int

    def forward(self, x: torch.Tensor, t: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


class WeibullCoxMarginals(MarginalModel):
    """S_k(t|x) = exp(-(t/scale_k)^shape_k exp(beta_k . x)), stored on the log scale."""

    def __init__(self, shapes, scales, betas):
        super().__init__()
        shapes = torch.as_tensor(np.asarray(shapes, dtype=float), dtype=DTYPE)
        scales = torch.as_tensor(np.asarray(scales, dtype=float), dtype=DTYPE)
        if bool((shapes <= 0).any()) or bool((scales <= 0).any()):
            raise DomainError("Weibull shape and scale must be positive")
        self.log_shape = nn.Parameter(torch.log(shapes))
        self.log_scale = nn.Parameter(torch.log(scales))
        self.beta = nn.Parameter(torch.as_tensor(np.asarray(betas, dtype=float), dtype=DTYPE).reshape(len(shapes), -1))
        self.n_events = len(shapes)

    def forward(self, x, t):
        rho = torch.exp(self.log_shape)
        lin = x @ self.beta.T if self.beta.shape[1] else torch.zeros(x.shape[0], self.n_events, dtype=DTYPE)
        logt = torch.log(t).unsqueeze(-1)
        z = rho * (logt - self.log_scale)  # log (t/lambda)^rho
        log_s = -torch.exp(z + lin)
        log_f = log_s + self.log_shape - self.log_scale + (rho - 1.0) * (logt - self.log_scale) + lin
        return log_s, log_f

    def to_dict(self):
        return {
            "kind": "weibull_cox",
            "shapes": torch.exp(self.log_shape).tolist(),
            "scales": torch.exp(self.log_scale).tolist(),
            "betas": self.beta.tolist(),
        }


_TMIN = 1e-12  # smallest scaled time fed to the log-time input


def _uniform(shape, bound, gen):
    return (torch.rand(shape, generator=gen, dtype=DTYPE) * 2.0 - 1.0) * bound


class MonotoneSurvivalNet(MarginalModel):
    """Shared covariate embedding plus one monotone network per event.

    Each head maps the embedding through a covariate subnet, then a joint
    subnet over (covariate features, t) in which every weight downstream of t
    is the square of a stored parameter, so the pre-sigmoid output g(t, x) is
    nondecreasing in t and S = sigmoid(-g). dg/dt is propagated forward
    alongside the activations, giving the density without autograd.
    Time enters divided by ``time_scale`` and, with ``log_time`` (default),
    through its logarithm so that g can follow log t near the origin the way
    proportional-hazards models do.
    """

    def __init__(
        self,
        n_events: int,
        covariate_dim: int,
        embed_width: int = 100,
        head_width: int = 100,
        mono_width: int = 100,
        mono_layers: int = 3,
        time_scale: float = 1.0,
        normalize: bool = False,
        log_time: bool = True,
        seed: int = 0,
    ):
        super().__init__()
        self.n_events = n_events
        self.arch = dict(
            n_events=n_events,
            covariate_dim=covariate_dim,
            embed_width=embed_width,
            head_width=head_width,
            mono_width=mono_width,
            mono_layers=mono_layers,
            normalize=normalize,
            log_time=log_time,
        )
        self.log_time = log_time
        self.time_scale = float(time_scale)
        self.normalize = normalize
        gen = torch.Generator().manual_seed(seed)
        E, D, W, H, M = n_events, covariate_dim, embed_width, head_width, mono_width

        def p(t):
            return nn.Parameter(t)

        self.emb_w1 = p(_uniform((D, W), 1 / math.sqrt(max(D, 1)), gen))
        self.emb_b1 = p(_uniform((W,), 1 / math.sqrt(max(D, 1)), gen))
        self.emb_w2 = p(_uniform((W, W), 1 / math.sqrt(W), gen))
        self.emb_b2 = p(_uniform((W,), 1 / math.sqrt(W), gen))
        self.cov_w1 = p(_uniform((E, W, H), 1 / math.sqrt(W), gen))
        self.cov_b1 = p(_uniform((E, 1, H), 1 / math.sqrt(W), gen))
        self.cov_w2 = p(_uniform((E, H, H), 1 / math.sqrt(H), gen))
        self.cov_b2 = p(_uniform((E, 1, H), 1 / math.sqrt(H), gen))
        # first monotone layer: unconstrained covariate weights, squared time weights
        self.mono_wx = p(_uniform((E, H, M), 1 / math.sqrt(H), gen))
        self.mono_vt = p(0.2 + 0.5 * torch.rand((E, 1, M), generator=gen, dtype=DTYPE))
        self.mono_b = nn.ParameterList([p(_uniform((E, 1, M), 0.5, gen)) for _ in range(mono_layers)])
        self.mono_v = nn.ParameterList(
            [p(torch.rand((E, M, M), generator=gen, dtype=DTYPE) * math.sqrt(2.0 / M)) for _ in range(mono_layers - 1)]
        )
        self.out_v = p(torch.rand((E, M, 1), generator=gen, dtype=DTYPE) * math.sqrt(6.0 / M))
        self.out_b = p(torch.zeros((E, 1, 1), dtype=DTYPE))

    def _g(self, x, t):
        """Pre-sigmoid output g and dg/dz, both (E, n), where z is the time input."""
        emb = torch.tanh(torch.tanh(x @ self.emb_w1 + self.emb_b1) @ self.emb_w2 + self.emb_b2)
        h = torch.tanh(torch.matmul(emb.unsqueeze(0), self.cov_w1) + self.cov_b1)
        h = torch.tanh(torch.bmm(h, self.cov_w2) + self.cov_b2)
        ts = (t / self.time_scale).reshape(1, -1, 1)
        if self.log_time:
            ts = torch.log(ts.clamp_min(_TMIN))
        wt = self.mono_vt**2
        a = torch.tanh(torch.bmm(h, self.mono_wx) + ts * wt + self.mono_b[0])
        da = (1.0 - a * a) * wt
        for v, b in zip(self.mono_v, list(self.mono_b)[1:]):
            w = v**2
            a = torch.tanh(torch.bmm(a, w) + b)
            da = (1.0 - a * a) * torch.bmm(da, w)
        w = self.out_v**2
        g = (torch.bmm(a, w) + self.out_b).squeeze(-1)
        dg = torch.bmm(da, w).squeeze(-1)
        return g, dg

    def forward(self, x, t):
        g, dg = self._g(x, t)
        log_s = F.logsigmoid(-g)
        # chain rule from the network's time input back to t
        if self.log_time:
            log_dz = -torch.log(t.clamp_min(_TMIN * self.time_scale))
        else:
            log_dz = torch.full_like(t, -math.log(self.time_scale))
        log_f = F.logsigmoid(g) + log_s + torch.log(dg.clamp_min(1e-300)) + log_dz
        if self.normalize:
            g0, _ = self._g(x, torch.zeros_like(t))
            log_s0 = F.logsigmoid(-g0)
            log_s = log_s - log_s0
            log_f = log_f - log_s0
        return log_s.T, log_f.T

    def to_dict(self):
        return {
            "kind": "monotone_net",
            "arch": dict(self.arch),
            "time_scale": self.time_scale,
            "params": {k: v.tolist() for k, v in self.state_dict().items()},
        }

    @classmethod
    def from_dict(cls, d):
        m = cls(time_scale=d["time_scale"], **d["arch"])
        m.load_state_dict({k: torch.as_tensor(v, dtype=DTYPE) for k, v in d["params"].items()})
        return m


def marginals_from_dict(d: dict) -> MarginalModel:
    if d["kind"] == "weibull_cox":
        return WeibullCoxMarginals(d["shapes"], d["scales"], d["betas"])
    if d["kind"] == "monotone_net":
        return MonotoneSurvivalNet.from_dict(d)
    raise ValueError(f"unknown marginal kind {d['kind']!r}")


def _eval(model: MarginalModel, k: int, t, x, which: int):
    ta = np.asarray(t, dtype=float)
    if np.any(ta < 0) or np.any(np.isnan(ta)):
        raise DomainError("time must be nonnegative")
    if not 0 <= k < model.n_events:
        raise IndexError(f"event {k} out of range")
    xa = np.atleast_2d(np.asarray(x, dtype=float))
    tb = np.broadcast_to(ta, (max(xa.shape[0], ta.size),)) if ta.ndim else np.full(xa.shape[0], float(ta))
    if xa.shape[0] == 1 and tb.size > 1:
        xa = np.repeat(xa, tb.size, axis=0)
    with torch.no_grad():
        out = model(torch.as_tensor(xa, dtype=DTYPE), torch.tensor(tb, dtype=DTYPE))[which]
    vals = torch.exp(out[:, k]).numpy().copy()
    return float(vals[0]) if (ta.ndim == 0 and np.ndim(x) <= 1) else vals


def survival(model: MarginalModel, k: int, t, x):
    """S_k(t | x). ``t`` scalar or array, ``x`` one covariate vector or a matrix."""
    return _eval(model, k, t, x, 0)


def density(model: MarginalModel, k: int, t, x):
    """f_k(t | x) = -dS_k/dt."""
    ta = np.asarray(t, dtype=float)
    if np.any(ta <= 0):
        raise DomainError("density needs t > 0")
    return _eval(model, k, t, x, 1)
