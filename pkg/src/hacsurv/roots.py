"""Vectorised safeguarded Newton iteration for monotone scalar equations."""

from __future__ import annotations

from typing import Callable

import torch

Tensor = torch.Tensor


class ConvergenceError(RuntimeError):
    """Root finding did not reach tolerance; carries the worst residual."""

    def __init__(self, msg: str, worst_residual: float, worst_index: int):
        super().__init__(f"{msg} (worst residual {worst_residual:.3e} at flat index {worst_index})")
        self.worst_residual = worst_residual
        self.worst_index = worst_index


@torch.no_grad()
def newton_bisect(
    fn: Callable[[Tensor], tuple[Tensor, Tensor]],
    lo: Tensor,
    hi: Tensor,
    increasing: bool,
    x0: Tensor | None = None,
    tol: float = 1e-13,
    max_iter: int = 200,
) -> Tensor:
    """Solve ``fn(x)[0] == 0`` elementwise inside the bracket ``[lo, hi]``.

    ``fn`` returns the residual and its derivative. The residual must change
    sign over the bracket in the direction given by ``increasing``. A Newton
    step that leaves the current bracket, or a derivative below 1e-14 in
    magnitude, is replaced by bisection.
    """
    lo = lo.clone()
    hi = hi.clone()
    x = (0.5 * (lo + hi)) if x0 is None else x0.clone()
    for _ in range(max_iter):
        g, dg = fn(x)
        done = (g.abs() <= tol) | ((hi - lo) <= 4 * torch.finfo(x.dtype).eps * x.abs().clamp_min(1e-300))
        if bool(done.all()):
            return x
        below = (g < 0) if increasing else (g > 0)
        lo = torch.where(below & ~done, x, lo)
        hi = torch.where(~below & ~done, x, hi)
        step = x - g / dg
        bad = (dg.abs() < 1e-14) | ~torch.isfinite(step) | (step <= lo) | (step >= hi)
        x_new = torch.where(bad, 0.5 * (lo + hi), step)
        x = torch.where(done, x, x_new)
    g, _ = fn(x)
    res = g.abs()
    if bool((res > tol * 1e3).any()):
        i = int(torch.argmax(torch.nan_to_num(res, nan=float("inf"))))
        raise ConvergenceError("newton_bisect did not converge", float(res.flatten()[i]), i)
    return x
