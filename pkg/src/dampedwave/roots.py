"""Scalar root finding for strictly monotone functions."""

from __future__ import annotations


def bisect_increasing(
    fn,
    lo: float,
    hi: float,
    target: float = 0.0,
    xtol: float = 1e-12,
    max_iter: int = 200,
) -> float:
    """Solve fn(x) = target for increasing fn on [lo, hi] by bisection.

    xtol is relative to the bracket scale; convergence is guaranteed for
    monotone fn with fn(lo) <= target <= fn(hi).
    """
    flo = fn(lo) - target
    fhi = fn(hi) - target
    if flo > 0 or fhi < 0:
        raise ValueError(
            f"target {target!r} not bracketed on [{lo!r}, {hi!r}]: "
            f"f(lo)-target={flo!r}, f(hi)-target={fhi!r}"
        )
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    scale = max(abs(lo), abs(hi), 1.0)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        fmid = fn(mid) - target
        if fmid == 0.0:
            return mid
        if fmid < 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= xtol * scale:
            break
    return 0.5 * (lo + hi)
