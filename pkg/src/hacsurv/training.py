"""Likelihood, copula discovery and the staged fitting pipeline.

Rows carry an event label e. Label k >= 0 contributes
log f_k(t|x) + log dC/du_k(u) with u_i = S_i(t|x); a label of -1 (used by the
pairwise reduction for rows whose event is outside the pair) contributes
log C(u), the probability that both variables are still alive at t.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from .generators import (
    CLAMP_EPS,
    DTYPE,
    EmpiricalGenerator,
    Generator,
    SubordinatorGenerator,
    check_nesting,
)
from .hac import (
    CopulaModel,
    HierarchicalCopula,
    IndependentCopula,
    SymmetricCopula,
    kendall_tau_exact,
)
from .marginals import MarginalModel, MonotoneSurvivalNet
from .sampling import SurvivalDataset, sample_bivariate

__all__ = [
    "MarginalArch",
    "GeneratorArch",
    "TrainConfig",
    "DivergenceError",
    "NestingError",
    "Blueprint",
    "StageRecord",
    "FitReport",
    "PairwiseFit",
    "FittedModel",
    "config_hash",
    "split_train_val",
    "row_log_likelihood",
    "neg_log_likelihood",
    "fit_pairwise",
    "fit_all_pairs",
    "select_structure",
    "fit_inner_regeneration",
    "fit_marginals_frozen_copula",
    "fit_symmetric_end_to_end",
    "fit_independent",
    "fit_hierarchical",
    "fit_with_structure",
    "fit",
    "gradient_check",
]


class DivergenceError(RuntimeError):
    """Validation loss never improved on its starting value, or became non-finite."""

    def __init__(self, msg: str, trace: list[float]):
        super().__init__(f"{msg}; validation trace {[round(v, 6) for v in trace]}")
        self.trace = trace


class NestingError(RuntimeError):
    pass


# --------------------------------------------------------------------------- configuration


@dataclass
class MarginalArch:
    embed_width: int = 100
    head_width: int = 100
    mono_width: int = 100
    mono_layers: int = 3
    normalize: bool = False


@dataclass
class GeneratorArch:
    n_atoms: int = 512
    hidden: int = 64
    n_layers: int = 2
    noise_dim: int = 2


@dataclass
class TrainConfig:
    """Optimiser and schedule settings shared by every fitting stage.

    ``copula_lr`` overrides ``lr`` for generator parameters when set;
    ``pairwise_rows`` caps the rows used by each pairwise fit.
    """

    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 1e-4
    epochs: int = 300
    batch_size: int = 512
    patience: int = 20
    val_fraction: float = 0.2
    seed: int = 0
    variant: str = "hierarchical"
    copula_lr: float | None = None
    n_regen: int = 10000
    regen_epochs: int | None = None
    pairwise_rows: int | None = None
    pairwise_epochs: int | None = None
    schedule: str = "constant"
    lr_factor: float = 0.5
    lr_patience: int = 5
    marginal: MarginalArch = field(default_factory=MarginalArch)
    generator: GeneratorArch = field(default_factory=GeneratorArch)

    def __post_init__(self):
        if isinstance(self.marginal, dict):
            self.marginal = MarginalArch(**self.marginal)
        if isinstance(self.generator, dict):
            self.generator = GeneratorArch(**self.generator)
        self.betas = tuple(self.betas)
        if self.lr <= 0 or self.eps <= 0 or self.weight_decay < 0 or self.batch_size <= 0:
            raise ValueError("learning rate, eps and batch size must be positive, weight decay nonnegative")
        if self.epochs < 0 or self.patience <= 0:
            raise ValueError("epochs must be nonnegative and patience positive")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in (0, 1)")
        if self.schedule not in ("constant", "plateau", "cosine"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.variant not in ("independent", "symmetric", "hierarchical"):
            raise ValueError(f"unknown variant {self.variant!r}")

    @classmethod
    def desk(cls, **overrides) -> "TrainConfig":
        """Smaller networks and schedules that fit a single CPU core."""
        base = dict(
            lr=1e-2,
            copula_lr=3e-2,
            schedule="cosine",
            epochs=100,
            batch_size=512,
            patience=25,
            n_regen=5000,
            regen_epochs=100,
            pairwise_rows=8000,
            pairwise_epochs=100,
            marginal=MarginalArch(embed_width=32, head_width=32, mono_width=32, mono_layers=3),
            generator=GeneratorArch(n_atoms=128, hidden=32, n_layers=2),
        )
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


def config_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


# --------------------------------------------------------------------------- data plumbing


@dataclass
class _Rows:
    x: torch.Tensor
    t: torch.Tensor
    e: torch.Tensor

    def __len__(self):
        return self.t.shape[0]

    def take(self, idx) -> "_Rows":
        return _Rows(self.x[idx], self.t[idx], self.e[idx])


def _rows(ds: SurvivalDataset, events=None) -> _Rows:
    e = ds.event if events is None else events
    return _Rows(
        torch.as_tensor(ds.x, dtype=DTYPE),
        torch.as_tensor(ds.time, dtype=DTYPE),
        torch.as_tensor(np.asarray(e), dtype=torch.long),
    )


def _pair_events(event: np.ndarray, i: int, j: int) -> np.ndarray:
    out = np.full(event.shape, -1, dtype=np.int64)
    out[event == i] = 0
    out[event == j] = 1
    return out


def split_train_val(ds: SurvivalDataset, val_fraction: float, seed: int) -> tuple[SurvivalDataset, SurvivalDataset]:
    """Random split; both parts keep at least one row."""
    n = len(ds)
    perm = np.random.default_rng(seed).permutation(n)
    n_val = min(max(1, int(round(val_fraction * n))), n - 1)
    return ds.subset(np.sort(perm[n_val:])), ds.subset(np.sort(perm[:n_val]))


# --------------------------------------------------------------------------- likelihood


def row_log_likelihood(copula: CopulaModel, marginals: MarginalModel, rows: _Rows) -> torch.Tensor:
    """Per-row log-likelihood terms, shape (n,)."""
    log_s, log_f = marginals(rows.x, rows.t)
    log_u = log_s.clamp(math.log(CLAMP_EPS), math.log1p(-CLAMP_EPS))
    u = torch.exp(log_u)
    idx = rows.e.clamp_min(0).unsqueeze(-1)
    has_event = rows.e >= 0
    out = torch.zeros_like(rows.t)
    if bool(has_event.any()):
        lp = copula.log_partials_t(u)
        out = torch.gather(log_f + lp, 1, idx).squeeze(-1)
    if bool((~has_event).any()):
        out = torch.where(has_event, out, copula.log_cdf_t(u))
    return out


def _diagnose(copula, marginals, rows: _Rows):
    with torch.no_grad():
        log_s, log_f = marginals(rows.x, rows.t)
        u = torch.exp(log_s.clamp(math.log(CLAMP_EPS), math.log1p(-CLAMP_EPS)))
        lp = copula.log_partials_t(u)
        for r in range(len(rows)):
            k = int(rows.e[r])
            for name, val in (("log density", log_f[r, k]), ("log copula partial", lp[r, k])):
                if not bool(torch.isfinite(val)):
                    return f"row {r} (event {k}): non-finite {name} = {float(val)}"
    return "non-finite term"


def neg_log_likelihood(copula: CopulaModel, marginals: MarginalModel, ds: SurvivalDataset, rows=None) -> float:
    """Total negative log-likelihood over ``rows`` (all rows by default)."""
    r = _rows(ds)
    if rows is not None:
        r = r.take(torch.as_tensor(np.asarray(rows, dtype=np.int64)))
    if len(r) == 0:
        return 0.0
    with torch.no_grad():
        ll = row_log_likelihood(copula, marginals, r)
    if not bool(torch.isfinite(ll).all()):
        raise FloatingPointError(_diagnose(copula, marginals, r))
    return float(-ll.sum())


# --------------------------------------------------------------------------- optimisation loop


@dataclass
class StageRecord:
    name: str
    train_nll: list[float] = field(default_factory=list)
    val_nll: list[float] = field(default_factory=list)
    best_epoch: int = 0
    info: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


def _mean_nll(loss_fn, data, batch_size: int) -> float:
    with torch.no_grad():
        tot = 0.0
        for s in range(0, len(data), 4 * batch_size):
            tot += float(loss_fn(data.take(slice(s, s + 4 * batch_size))))
    return tot / max(len(data), 1)


def _optimize(name, modules, groups, loss_fn, train, val, cfg: TrainConfig, epochs: int, seed: int, callback=None) -> StageRecord:
    """AdamW over ``groups`` with early stopping on validation mean NLL.

    ``loss_fn(batch)`` returns the summed negative log-likelihood. The best
    validation state (epoch 0 included) is restored on exit.
    """
    rec = StageRecord(name)
    groups = [g for g in groups if g["params"]]
    init_val = _mean_nll(loss_fn, val, cfg.batch_size)
    if not math.isfinite(init_val):
        raise DivergenceError(f"{name}: non-finite initial validation loss", [init_val])
    rec.val_nll.append(init_val)
    rec.train_nll.append(_mean_nll(loss_fn, train, cfg.batch_size))
    if epochs == 0 or not groups:
        return rec
    opt = torch.optim.AdamW(groups, lr=cfg.lr, betas=cfg.betas, eps=cfg.eps, weight_decay=cfg.weight_decay)
    if cfg.schedule == "cosine":
        sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=epochs)
    elif cfg.schedule == "plateau":
        sched = torch.optim.lr_scheduler.ReduceLROnPlateau(opt, factor=cfg.lr_factor, patience=cfg.lr_patience)
    else:
        sched = None
    gen = torch.Generator().manual_seed(seed)
    best = init_val
    best_state = [copy.deepcopy(m.state_dict()) for m in modules]
    since = 0
    n = len(train)
    for epoch in range(1, epochs + 1):
        perm = torch.randperm(n, generator=gen)
        tot = 0.0
        for s in range(0, n, cfg.batch_size):
            batch = train.take(perm[s : s + cfg.batch_size])
            opt.zero_grad()
            loss = loss_fn(batch)
            if not bool(torch.isfinite(loss)):
                raise DivergenceError(f"{name}: non-finite training loss at epoch {epoch}", rec.val_nll)
            (loss / len(batch)).backward()
            opt.step()
            tot += float(loss.detach())
        v = _mean_nll(loss_fn, val, cfg.batch_size)
        rec.train_nll.append(tot / n)
        rec.val_nll.append(v)
        if not math.isfinite(v):
            raise DivergenceError(f"{name}: non-finite validation loss at epoch {epoch}", rec.val_nll)
        if isinstance(sched, torch.optim.lr_scheduler.ReduceLROnPlateau):
            sched.step(v)
        elif sched is not None:
            sched.step()
        if callback is not None:
            callback(epoch, rec)
        if v < best:
            best, since, rec.best_epoch = v, 0, epoch
            best_state = [copy.deepcopy(m.state_dict()) for m in modules]
        else:
            since += 1
            if since >= cfg.patience:
                if rec.best_epoch == 0:
                    raise DivergenceError(f"{name}: validation loss did not improve in {cfg.patience} epochs", rec.val_nll)
                break
    for m, st in zip(modules, best_state):
        m.load_state_dict(st)
    return rec


def _new_marginals(n_events: int, covariate_dim: int, time_scale: float, cfg: TrainConfig, seed: int) -> MonotoneSurvivalNet:
    a = cfg.marginal
    return MonotoneSurvivalNet(
        n_events,
        covariate_dim,
        embed_width=a.embed_width,
        head_width=a.head_width,
        mono_width=a.mono_width,
        mono_layers=a.mono_layers,
        time_scale=time_scale,
        normalize=a.normalize,
        seed=seed,
    )


def _new_generator(cfg: TrainConfig, seed: int) -> EmpiricalGenerator:
    a = cfg.generator
    return EmpiricalGenerator(a.n_atoms, a.hidden, a.n_layers, a.noise_dim, seed=seed)


def _joint_loss(copula, marginals):
    return lambda b: -row_log_likelihood(copula, marginals, b).sum()


def _groups(cfg: TrainConfig, marginals=None, generator=None):
    out = []
    if marginals is not None:
        out.append({"params": [p for p in marginals.parameters() if p.requires_grad], "lr": cfg.lr})
    if generator is not None:
        out.append({"params": [p for p in generator.parameters() if p.requires_grad], "lr": cfg.copula_lr or cfg.lr})
    return out


def _ensure_split(ds, val, cfg, seed):
    if val is None:
        return split_train_val(ds, cfg.val_fraction, seed)
    return ds, val


# --------------------------------------------------------------------------- pairwise discovery


@dataclass
class PairwiseFit:
    pair: tuple[int, int]
    generator: EmpiricalGenerator
    marginals: MonotoneSurvivalNet
    tau: float
    val_nll: float
    record: StageRecord


def fit_pairwise(ds: SurvivalDataset, pair, cfg: TrainConfig, val: SurvivalDataset | None = None) -> PairwiseFit:
    """Fit a bivariate copula and two marginals for labels (i, j) end to end.

    Rows with any other label count as censored for both variables.
    """
    i, j = int(pair[0]), int(pair[1])
    if i == j or not (0 <= i < ds.n_events and 0 <= j < ds.n_events):
        raise ValueError(f"invalid pair {pair!r}")
    seed = cfg.seed * 1009 + 31 * i + j
    train, val = _ensure_split(ds, val, cfg, seed)
    if cfg.pairwise_rows is not None and len(train) > cfg.pairwise_rows:
        keep = np.sort(np.random.default_rng(seed).choice(len(train), cfg.pairwise_rows, replace=False))
        train = train.subset(keep)
        n_val = max(1, int(round(cfg.pairwise_rows * cfg.val_fraction / (1 - cfg.val_fraction))))
        if len(val) > n_val:
            val = val.subset(np.sort(np.random.default_rng(seed + 1).choice(len(val), n_val, replace=False)))
    tr = _rows(train, _pair_events(train.event, i, j))
    va = _rows(val, _pair_events(val.event, i, j))
    gen = _new_generator(cfg, seed)
    marg = _new_marginals(2, ds.covariate_dim, float(train.time.max()), cfg, seed + 7)
    cop = SymmetricCopula(gen, 2)
    epochs = cfg.pairwise_epochs if cfg.pairwise_epochs is not None else cfg.epochs
    rec = _optimize(
        f"pairwise({i},{j})", [gen, marg], _groups(cfg, marg, gen), _joint_loss(cop, marg), tr, va, cfg, epochs, seed
    )
    tau = kendall_tau_exact(gen)
    rec.info["tau"] = tau
    return PairwiseFit((i, j), gen, marg, tau, min(rec.val_nll), rec)


def fit_all_pairs(ds: SurvivalDataset, cfg: TrainConfig, val=None) -> tuple[np.ndarray, dict]:
    """Pairwise fits over every pair of labels; returns the tau matrix and the fits."""
    k = ds.n_events
    taus = np.eye(k)
    fits = {}
    for i in range(k):
        for j in range(i + 1, k):
            f = fit_pairwise(ds, (i, j), cfg, val)
            fits[(i, j)] = f
            taus[i, j] = taus[j, i] = f.tau
    return taus, fits


# --------------------------------------------------------------------------- structure selection


@dataclass
class Blueprint:
    """Two-level copula layout chosen from pairwise dependence strengths.

    ``kind`` is "independent", "symmetric" or "hierarchical". ``outer_pair``
    names the pairwise fit whose generator becomes the root, and
    ``targets[g]`` the pair whose fitted generator each inner group is
    regenerated from.
    """

    kind: str
    dim: int
    outer_leaves: list[int]
    groups: list[list[int]]
    outer_pair: tuple[int, int] | None
    targets: list[tuple[int, int]]
    merges: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["outer_pair"] = None if self.outer_pair is None else list(self.outer_pair)
        d["targets"] = [list(t) for t in self.targets]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Blueprint":
        return cls(
            d["kind"],
            d["dim"],
            list(d["outer_leaves"]),
            [list(g) for g in d["groups"]],
            None if d["outer_pair"] is None else tuple(d["outer_pair"]),
            [tuple(t) for t in d["targets"]],
            d.get("merges", []),
        )


def _linkage(s: np.ndarray, a: list[int], b: list[int]) -> float:
    return float(np.mean(s[np.ix_(a, b)]))


def select_structure(taus, independence_threshold: float = 0.05) -> Blueprint:
    """Greedy average-linkage grouping of |tau| into a two-level blueprint.

    A merge joins two singletons or a singleton with an existing group and is
    accepted only while its strength strictly exceeds the strongest linkage
    left between clusters afterwards. Ties go to the lexicographically
    smallest (min index, min index) pair.
    """
    s = np.abs(np.asarray(taus, dtype=float))
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValueError("tau matrix must be square")
    if not np.allclose(s, s.T, atol=1e-12):
        raise ValueError("tau matrix must be symmetric")
    d = s.shape[0]
    if d == 1:
        return Blueprint("independent", 1, [0], [], None, [])
    off = s[~np.eye(d, dtype=bool)]
    censor_pairs = sorted(((s[0, j], 0, j) for j in range(1, d)))
    outer_pair = (censor_pairs[0][1], censor_pairs[0][2])
    if off.max() < independence_threshold:
        return Blueprint("independent", d, list(range(d)), [], None, [])
    clusters = [[i] for i in range(d)]
    merges = []
    while True:
        best = None
        for a in range(len(clusters)):
            for b in range(a + 1, len(clusters)):
                ca, cb = clusters[a], clusters[b]
                if len(ca) > 1 and len(cb) > 1:
                    continue
                key = (-_linkage(s, ca, cb), min(ca), min(cb))
                if best is None or key < best[0]:
                    best = (key, a, b)
        if best is None:
            break
        strength = -best[0][0]
        _, a, b = best
        merged = sorted(clusters[a] + clusters[b])
        rest = [c for k, c in enumerate(clusters) if k not in (a, b)] + [merged]
        if len(rest) == 1:
            break  # joining the last two clusters is the outer copula itself
        outer = max(
            (_linkage(s, rest[p], rest[q]) for p in range(len(rest)) for q in range(p + 1, len(rest))), default=0.0
        )
        if not strength > outer:
            break
        merges.append({"merged": merged, "strength": strength, "outer_after": outer})
        clusters = rest
    groups = sorted([c for c in clusters if len(c) > 1])
    outer_leaves = sorted(c[0] for c in clusters if len(c) == 1)
    if not groups or len(clusters) == 1:
        return Blueprint("symmetric", d, list(range(d)), [], outer_pair, [], merges)
    targets = []
    for g in groups:
        avg = np.mean([s[p, q] for p in g for q in g if p < q])
        cands = sorted((abs(s[p, q] - avg), p, q) for p in g for q in g if p < q)
        targets.append((cands[0][1], cands[0][2]))
    return Blueprint("hierarchical", d, outer_leaves, groups, outer_pair, targets, merges)


# --------------------------------------------------------------------------- re-generation of inner generators


def fit_inner_regeneration(
    outer: Generator, target: Generator, cfg: TrainConfig, n_regen: int | None = None, seed: int | None = None
) -> tuple[SubordinatorGenerator, StageRecord]:
    """Draw (u, v) from ``target`` and fit phi0 o psi to them by maximum likelihood.

    The outer generator is frozen; x = phi0^{-1}(u) is computed once.
    """
    n_regen = cfg.n_regen if n_regen is None else n_regen
    if n_regen <= 0:
        raise ValueError("n_regen must be positive")
    seed = cfg.seed if seed is None else seed
    uv = sample_bivariate(target, n_regen, seed)
    flags = [p.requires_grad for p in outer.parameters()]
    for p in outer.parameters():
        p.requires_grad_(False)
    try:
        with torch.no_grad():
            x = outer.inverse(torch.as_tensor(uv, dtype=DTYPE))
            const = outer.log_neg_dphi(x).sum(-1)
        inner = SubordinatorGenerator(outer, _new_generator(cfg, seed + 3), mu=1.0, beta=1.0)

        def loss(b):
            y = inner.psi_inverse(b.x)
            s = y.sum(-1)
            ll = inner.log_d2phi(s) - b.t - inner.log_dpsi(y).sum(-1)
            return -ll.sum()

        # reuse the row container: x holds phi0^{-1}(u, v), t the constant outer terms
        data = _Rows(x, const, torch.zeros(n_regen, dtype=torch.long))
        perm = torch.as_tensor(np.random.default_rng(seed).permutation(n_regen))
        n_val = max(1, int(round(cfg.val_fraction * n_regen))) if n_regen > 1 else 0
        tr, va = data.take(perm[n_val:]), data.take(perm[:n_val] if n_val else perm)
        epochs = cfg.regen_epochs if cfg.regen_epochs is not None else cfg.epochs
        groups = [{"params": list(inner.parameters()), "lr": cfg.copula_lr or cfg.lr}]
        rec = _optimize("regeneration", [inner], groups, loss, tr, va, cfg, epochs, seed)
    finally:
        for p, f in zip(outer.parameters(), flags):
            p.requires_grad_(f)
    report = check_nesting(outer, inner, np.concatenate([[0.0], np.geomspace(1e-3, 1e3, 40)]))
    if not report.passed:
        raise NestingError(f"fitted inner generator fails the nesting check: {report.detail}")
    rec.info["tau_target"] = kendall_tau_exact(target)
    rec.info["tau_fitted"] = kendall_tau_exact(inner)
    rec.info["mu"] = inner.mu
    rec.info["beta"] = inner.beta
    return inner, rec


# --------------------------------------------------------------------------- marginal fitting and variants


def fit_marginals_frozen_copula(
    ds: SurvivalDataset, copula: CopulaModel, cfg: TrainConfig, val=None, marginals: MarginalModel | None = None
) -> tuple[MarginalModel, StageRecord]:
    """Maximise the joint likelihood over marginal parameters with the copula held fixed."""
    if copula.dim != ds.n_events:
        raise ValueError(f"copula has {copula.dim} coordinates but the data has {ds.n_events} labels")
    seed = cfg.seed * 1009 + 5
    train, val = _ensure_split(ds, val, cfg, seed)
    marg = marginals or _new_marginals(ds.n_events, ds.covariate_dim, float(train.time.max()), cfg, seed)
    flags = [p.requires_grad for p in copula.parameters()]
    for p in copula.parameters():
        p.requires_grad_(False)
    try:
        rec = _optimize(
            "marginals(frozen copula)",
            [marg],
            _groups(cfg, marg),
            _joint_loss(copula, marg),
            _rows(train),
            _rows(val),
            cfg,
            cfg.epochs,
            seed,
        )
    finally:
        for p, f in zip(copula.parameters(), flags):
            p.requires_grad_(f)
    return marg, rec


def fit_symmetric_end_to_end(ds: SurvivalDataset, cfg: TrainConfig, val=None):
    """One learnable generator over all labels, trained jointly with the marginals."""
    seed = cfg.seed * 1009 + 11
    train, val = _ensure_split(ds, val, cfg, seed)
    gen = _new_generator(cfg, seed)
    cop = SymmetricCopula(gen, ds.n_events)
    marg = _new_marginals(ds.n_events, ds.covariate_dim, float(train.time.max()), cfg, seed + 7)
    rec = _optimize(
        "symmetric(end to end)",
        [gen, marg],
        _groups(cfg, marg, gen),
        _joint_loss(cop, marg),
        _rows(train),
        _rows(val),
        cfg,
        cfg.epochs,
        seed,
    )
    rec.info["tau"] = kendall_tau_exact(gen)
    return cop, marg, rec


@dataclass
class FitReport:
    variant: str
    config: dict
    seed: int
    config_sha256: str
    stages: list[StageRecord] = field(default_factory=list)
    pairwise_taus: list[list[float]] | None = None
    blueprint: dict | None = None
    outer_generator_fixed: bool = True
    wall_clock_s: float = 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stages"] = [s.to_dict() for s in self.stages]
        return d

    @property
    def stage_names(self) -> list[str]:
        return [s.name for s in self.stages]


@dataclass
class FittedModel:
    variant: str
    copula: CopulaModel
    marginals: MarginalModel
    report: FitReport


def fit_independent(ds: SurvivalDataset, cfg: TrainConfig, val=None) -> FittedModel:
    t0 = time.perf_counter()
    cop = IndependentCopula(ds.n_events)
    marg, rec = fit_marginals_frozen_copula(ds, cop, cfg, val)
    rep = _report("independent", cfg, [rec], t0)
    return FittedModel("independent", cop, marg, rep)


def _report(variant, cfg, stages, t0, **kw) -> FitReport:
    cd = cfg.to_dict()
    return FitReport(variant, cd, cfg.seed, config_hash(cd), stages, wall_clock_s=time.perf_counter() - t0, **kw)


def fit_with_structure(
    ds: SurvivalDataset,
    blueprint: Blueprint,
    pair_fits: dict,
    cfg: TrainConfig,
    val=None,
) -> tuple[CopulaModel, MarginalModel, list[StageRecord]]:
    """Build the copula named by ``blueprint`` from pairwise fits, then fit the marginals."""
    stages = []
    if blueprint.kind == "independent":
        cop: CopulaModel = IndependentCopula(blueprint.dim)
    elif blueprint.kind == "symmetric":
        cop = SymmetricCopula(copy.deepcopy(pair_fits[tuple(blueprint.outer_pair)].generator), blueprint.dim)
    else:
        outer = copy.deepcopy(pair_fits[tuple(blueprint.outer_pair)].generator)
        groups = []
        for k, (leaves, tgt) in enumerate(zip(blueprint.groups, blueprint.targets)):
            inner, rec = fit_inner_regeneration(outer, pair_fits[tuple(tgt)].generator, cfg, seed=cfg.seed * 1009 + 101 + k)
            rec.name = f"regeneration(group {leaves})"
            stages.append(rec)
            groups.append((inner, leaves))
        cop = HierarchicalCopula(outer, blueprint.outer_leaves, groups)
    marg, rec = fit_marginals_frozen_copula(ds, cop, cfg, val)
    stages.append(rec)
    return cop, marg, stages


def fit_hierarchical(ds: SurvivalDataset, cfg: TrainConfig, val=None) -> FittedModel:
    """Pairwise discovery, structure selection, re-generation, then marginals under the frozen HAC."""
    t0 = time.perf_counter()
    train, val = _ensure_split(ds, val, cfg, cfg.seed * 1009 + 5)
    taus, fits = fit_all_pairs(train, cfg, val)
    bp = select_structure(taus)
    stages = [f.record for f in fits.values()]
    structure = StageRecord("structure selection", info=bp.to_dict())
    stages.append(structure)
    cop, marg, rest = fit_with_structure(train, bp, fits, cfg, val)
    stages += rest
    rep = _report("hierarchical", cfg, stages, t0, pairwise_taus=taus.tolist(), blueprint=bp.to_dict())
    return FittedModel("hierarchical", cop, marg, rep)


def fit(ds: SurvivalDataset, cfg: TrainConfig, val=None) -> FittedModel:
    """Dispatch on ``cfg.variant``."""
    if cfg.variant == "independent":
        return fit_independent(ds, cfg, val)
    if cfg.variant == "symmetric":
        t0 = time.perf_counter()
        cop, marg, rec = fit_symmetric_end_to_end(ds, cfg, val)
        return FittedModel("symmetric", cop, marg, _report("symmetric", cfg, [rec], t0))
    return fit_hierarchical(ds, cfg, val)


# --------------------------------------------------------------------------- gradient checking


def gradient_check(copula: CopulaModel, marginals: MarginalModel, ds: SurvivalDataset, rel: float = 1e-3) -> dict:
    """Compare autograd gradients of the summed NLL with central differences.

    Every scalar of every trainable parameter is perturbed by
    h = 1e-4 * max(|p|, 1). A scalar passes when
    |a - b| <= rel * max(|a|, |b|) + 1e-7.
    """
    rows = _rows(ds)
    named = [(f"copula.{n}", p) for n, p in copula.named_parameters() if p.requires_grad]
    named += [(f"marginals.{n}", p) for n, p in marginals.named_parameters() if p.requires_grad]
    for _, p in named:
        p.grad = None
    loss = -row_log_likelihood(copula, marginals, rows).sum()
    loss.backward()
    worst = 0.0
    failures = []
    checked = 0
    with torch.no_grad():
        for name, p in named:
            g = p.grad.detach().clone().flatten() if p.grad is not None else torch.zeros(p.numel(), dtype=DTYPE)
            flat = p.view(-1)
            for i in range(flat.numel()):
                orig = float(flat[i])
                h = 1e-4 * max(abs(orig), 1.0)
                flat[i] = orig + h
                up = float(-row_log_likelihood(copula, marginals, rows).sum())
                flat[i] = orig - h
                dn = float(-row_log_likelihood(copula, marginals, rows).sum())
                flat[i] = orig
                fd = (up - dn) / (2 * h)
                a = float(g[i])
                err = abs(a - fd)
                scale = max(abs(a), abs(fd))
                checked += 1
                ratio = err / (rel * scale + 1e-7)
                worst = max(worst, ratio)
                if ratio > 1.0:
                    failures.append((name, i, a, fd))
    for _, p in named:
        p.grad = None
    return {"checked": checked, "failures": failures, "worst_ratio": worst, "passed": not failures}
