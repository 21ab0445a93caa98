"""Prediction on a time grid and the evaluation metrics.

The cause-specific CIF is the conditional probability
F_k(t|x) = P(T_k <= t | T_i > t for i != k, x) = 1 - C(u) / C(u with u_k = 1),
with u_i = S_i(t|x).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .generators import DTYPE, DomainError
from .hac import CopulaModel
from .marginals import MarginalModel
from .sampling import SurvivalDataset

__all__ = [
    "PredictionGrid",
    "StepFunction",
    "quantile_grid",
    "uniform_grid",
    "predict",
    "predict_cif",
    "survival_l1",
    "ctd_index",
    "ibs",
    "km_censoring",
    "choose_risk_score",
    "evaluate",
]

_TINY = 1e-300


@dataclass
class PredictionGrid:
    """Per-subject, per-event curves on a shared increasing time grid; arrays are (n, events, grid)."""

    times: np.ndarray
    survival: np.ndarray | None = None
    cif: np.ndarray | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if self.times.ndim != 1 or self.times.size == 0 or np.any(np.diff(self.times) <= 0):
            raise ValueError("grid times must be a nonempty strictly increasing vector")
        for arr in (self.survival, self.cif):
            if arr is not None and (arr.ndim != 3 or arr.shape[2] != self.times.size):
                raise ValueError("prediction arrays must be (subjects, events, grid points)")


def quantile_grid(times, n_points: int = 100) -> np.ndarray:
    """``n_points`` empirical quantiles of the observed times, ending at the maximum."""
    t = np.asarray(times, dtype=float)
    levels = np.linspace(0.0, 1.0, n_points + 1)[1:]
    grid = np.unique(np.quantile(t, levels))
    return grid[grid > 0]


def uniform_grid(t_max: float, n_points: int = 200) -> np.ndarray:
    return np.linspace(0.0, float(t_max), n_points)


def _surv_on_grid(marginals: MarginalModel, x: np.ndarray, times: np.ndarray) -> torch.Tensor:
    """log S for every subject, event and grid time: (n, E, G)."""
    n, g = x.shape[0], times.size
    xt = torch.as_tensor(np.repeat(x, g, axis=0), dtype=DTYPE)
    tt = torch.as_tensor(np.tile(times, n), dtype=DTYPE)
    with torch.no_grad():
        log_s, _ = marginals(xt, tt)
    return log_s.reshape(n, g, -1).permute(0, 2, 1)


def _cif_from_log_s(copula: CopulaModel, log_s: torch.Tensor) -> torch.Tensor:
    """CIF for (..., E) log-survival rows."""
    shape = log_s.shape
    u = torch.exp(log_s.reshape(-1, shape[-1])).clamp_min(_TINY)
    with torch.no_grad():
        full = copula.log_cdf_t(u)
        drop = copula.log_cdf_drop_t(u)
    if bool((drop < math.log(_TINY)).any()):
        raise FloatingPointError("copula denominator below 1e-300: degenerate prediction region")
    f = -torch.expm1((full.unsqueeze(-1) - drop).clamp_max(0.0))
    return f.reshape(shape)


def predict(copula: CopulaModel, marginals: MarginalModel, x, times, chunk: int = 256) -> PredictionGrid:
    """Marginal survival and cause-specific CIF for every subject over ``times``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    times = np.asarray(times, dtype=float)
    surv, cif = [], []
    for s in range(0, x.shape[0], chunk):
        log_s = _surv_on_grid(marginals, x[s : s + chunk], times)
        surv.append(torch.exp(log_s).numpy())
        cif.append(_cif_from_log_s(copula, log_s.permute(0, 2, 1)).permute(0, 2, 1).numpy())
    return PredictionGrid(times, np.concatenate(surv), np.concatenate(cif))


def predict_cif(copula: CopulaModel, marginals: MarginalModel, k: int, t, x):
    """F_k(t | x) for one subject (or a matrix of subjects) at time(s) t > 0."""
    if not 0 <= k < copula.dim:
        raise IndexError(f"event {k} out of range")
    ta = np.asarray(t, dtype=float)
    if np.any(~(ta > 0)):
        raise DomainError("prediction time must be positive")
    xa = np.atleast_2d(np.asarray(x, dtype=float))
    n = max(xa.shape[0], ta.size)
    xa = np.broadcast_to(xa, (n, xa.shape[1]))
    tb = np.broadcast_to(ta.reshape(-1), (n,))
    with torch.no_grad():
        log_s, _ = marginals(torch.tensor(xa, dtype=DTYPE), torch.tensor(tb, dtype=DTYPE))
    out = _cif_from_log_s(copula, log_s)[:, k].numpy()
    return float(out[0]) if (ta.ndim == 0 and np.ndim(x) <= 1) else out


# --------------------------------------------------------------------------- Survival-L1


def survival_l1(est: PredictionGrid, truth, x, t_max: float | None = None, n_points: int = 200) -> np.ndarray:
    """Mean over subjects of (1/t_max) * integral_0^t_max |S_true - S_est| dt, per event.

    ``truth`` is a marginal model (or any callable ``truth(x, t) -> (log S, ...)``)
    evaluated on a uniform ``n_points`` grid over [0, t_max]; estimates are
    interpolated onto that grid with S(0) = 1 when the prediction grid starts
    later. Integration is by the trapezoid rule.
    """
    if truth is None:
        raise ValueError("Survival-L1 needs a ground-truth marginal oracle")
    if est.survival is None:
        raise ValueError("prediction grid carries no survival curves")
    t_max = float(est.times[-1]) if t_max is None else float(t_max)
    grid = uniform_grid(t_max, n_points)
    xa = np.atleast_2d(np.asarray(x, dtype=float))
    true_s = np.exp(_surv_on_grid(truth, xa, grid).numpy())
    est_s = _interp_survival(est, grid)
    diff = np.abs(true_s - est_s)
    area = np.trapezoid(diff, grid, axis=-1) / t_max
    return area.mean(axis=0)


def _interp_survival(est: PredictionGrid, grid: np.ndarray) -> np.ndarray:
    if est.times.size == grid.size and np.array_equal(est.times, grid):
        return est.survival
    times, surv = est.times, est.survival
    if times[0] > 0:
        times = np.concatenate([[0.0], times])
        surv = np.concatenate([np.ones(surv.shape[:2] + (1,)), surv], axis=-1)
    n, e, _ = surv.shape
    flat = surv.reshape(n * e, -1)
    out = np.stack([np.interp(grid, times, row) for row in flat])
    return out.reshape(n, e, grid.size)


# --------------------------------------------------------------------------- concordance


def ctd_index(scores, times_grid, time, event, k: int) -> float:
    """Time-dependent concordance for event k.

    ``scores`` is (n, G): a risk score (e.g. the CIF) per subject on the grid,
    or (n,) for a time-constant score. A pair (i, j) is comparable when
    e_i = k and t_i < t_j, and concordant when subject i's score at t_i
    exceeds subject j's score at t_i. Scores between grid points use the
    last grid point at or before t_i (the first grid point before the grid
    starts). Tied scores count one half.
    """
    s = np.asarray(scores, dtype=float)
    if s.ndim == 1:
        s = s[:, None]
        times_grid = np.zeros(1)
    time = np.asarray(time, dtype=float)
    event = np.asarray(event)
    idx = np.clip(np.searchsorted(np.asarray(times_grid, dtype=float), time, side="right") - 1, 0, s.shape[1] - 1)
    conc = 0.0
    comp = 0
    for i in np.flatnonzero(event == k):
        later = time > time[i]
        m = int(later.sum())
        if m == 0:
            continue
        col = s[:, idx[i]]
        si = col[i]
        other = col[later]
        conc += float((other < si).sum()) + 0.5 * float((other == si).sum())
        comp += m
    if comp == 0:
        raise ValueError(f"no comparable pairs for event {k}")
    return conc / comp


# --------------------------------------------------------------------------- IPCW Brier score


@dataclass
class StepFunction:
    """Right-continuous step function equal to 1 before its first jump."""

    times: np.ndarray
    values: np.ndarray

    def __call__(self, t):
        i = np.searchsorted(self.times, np.asarray(t, dtype=float), side="right") - 1
        return np.where(i >= 0, self.values[np.maximum(i, 0)], 1.0) if self.times.size else np.ones_like(np.asarray(t, dtype=float))

    def left(self, t):
        """Left limit G(t-)."""
        i = np.searchsorted(self.times, np.asarray(t, dtype=float), side="left") - 1
        return np.where(i >= 0, self.values[np.maximum(i, 0)], 1.0) if self.times.size else np.ones_like(np.asarray(t, dtype=float))


def km_censoring(time, event) -> StepFunction:
    """Kaplan-Meier estimate of the censoring survival G(t) = P(C > t).

    Censoring (label 0) plays the role of the event; every other label
    censors the censoring time.
    """
    time = np.asarray(time, dtype=float)
    cens = np.asarray(event) == 0
    if time.size == 0:
        raise ValueError("empty dataset")
    uniq, inv = np.unique(time, return_inverse=True)
    d = np.bincount(inv, weights=cens.astype(float), minlength=uniq.size)
    n_at = np.bincount(inv, minlength=uniq.size)
    at_risk = n_at[::-1].cumsum()[::-1]
    factors = 1.0 - d / at_risk
    jumps = d > 0
    return StepFunction(uniq[jumps], np.cumprod(factors)[jumps])


def ibs(surv, times_grid, time, event, k: int, g_hat: StepFunction | None = None, floor: float = 0.05) -> tuple[float, int]:
    """Integrated IPCW Brier score for the marginal survival of event k.

    ``surv`` is (n, G). At grid time s, subject i contributes
    S_i(s)^2 / G(t_i-) if t_i <= s and e_i = k, (1 - S_i(s))^2 / G(s) if
    t_i > s, and nothing otherwise; G is floored at ``floor``. Grid points
    with an empty risk set are skipped. The score is the trapezoid average
    over the remaining points (their plain mean if only one remains).
    Returns (score, number of skipped points).
    """
    s = np.asarray(surv, dtype=float)
    grid = np.asarray(times_grid, dtype=float)
    time = np.asarray(time, dtype=float)
    event = np.asarray(event)
    if g_hat is None:
        g_at_event = np.ones_like(time)
        g_grid = np.ones_like(grid)
    else:
        g_at_event = np.maximum(g_hat.left(time), floor)
        g_grid = np.maximum(g_hat(grid), floor)
    n = time.size
    scores, kept = [], []
    skipped = 0
    for j, tj in enumerate(grid):
        alive = time > tj
        if not alive.any():
            skipped += 1
            continue
        died = (time <= tj) & (event == k)
        term = np.where(died, s[:, j] ** 2 / g_at_event, 0.0) + np.where(alive, (1.0 - s[:, j]) ** 2 / g_grid[j], 0.0)
        scores.append(term.sum() / n)
        kept.append(tj)
    if not scores:
        raise ValueError("every grid point has an empty risk set")
    if len(scores) == 1:
        return float(scores[0]), skipped
    kept = np.asarray(kept)
    return float(np.trapezoid(scores, kept) / (kept[-1] - kept[0])), skipped


# --------------------------------------------------------------------------- selection and reports


def choose_risk_score(pred: PredictionGrid, ds: SurvivalDataset) -> str:
    """Pick "cif" or "survival" (risk 1 - S) by mean C-td over the risks (labels >= 1)."""
    means = {}
    for name, arr in (("cif", pred.cif), ("survival", None if pred.survival is None else 1.0 - pred.survival)):
        if arr is None:
            continue
        vals = []
        for k in range(1, ds.n_events):
            try:
                vals.append(ctd_index(arr[:, k], pred.times, ds.time, ds.event, k))
            except ValueError:
                pass
        means[name] = float(np.mean(vals)) if vals else -1.0
    return max(sorted(means), key=lambda n: means[n])


def evaluate(pred: PredictionGrid, ds: SurvivalDataset, g_hat: StepFunction | None = None, truth=None, risk_score: str = "cif") -> dict:
    """Per-event C-td, IBS and (when ``truth`` is given) Survival-L1."""
    out: dict = {"grid": pred.times.tolist(), "risk_score": risk_score, "events": {}}
    scores = pred.cif if risk_score == "cif" else 1.0 - pred.survival
    l1 = survival_l1(pred, truth, ds.x, float(ds.time.max())) if truth is not None else None
    for k in range(1, ds.n_events):
        rec: dict = {}
        try:
            rec["ctd"] = ctd_index(scores[:, k], pred.times, ds.time, ds.event, k)
        except ValueError:
            rec["ctd"] = None
        if pred.survival is not None:
            rec["ibs"], rec["ibs_skipped_points"] = ibs(pred.survival[:, k], pred.times, ds.time, ds.event, k, g_hat)
        if l1 is not None:
            rec["survival_l1"] = float(l1[k])
        out["events"][str(k)] = rec
    return out
