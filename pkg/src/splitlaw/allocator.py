"""Compute allocation between shared pretraining and per-domain continued pretraining.

With ``K`` domains and a total budget ``D_T`` (billions of tokens), a run that
pretrains for ``D`` tokens and then continues each of the ``K`` copies for
``D'`` tokens spends ``D + K * D'``. Everything here works on the fitted
per-domain split laws, averaged with domain weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DegenerateError, DomainError
from .laws import SplitLawParams, _split_predict, partials_tokens

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
GRID_POINTS = 4097


def _as_laws(laws) -> list[SplitLawParams]:
    if isinstance(laws, SplitLawParams):
        return [laws]
    laws = list(laws)
    if not laws:
        raise ValueError("need at least one law")
    return laws


def _weights(laws, weights) -> np.ndarray:
    if weights is None:
        return np.full(len(laws), 1.0 / len(laws))
    w = np.asarray(weights, dtype=float)
    if w.shape != (len(laws),) or np.any(w < 0) or w.sum() <= 0:
        raise ValueError("weights must be nonnegative, one per law, and not all zero")
    return w / w.sum()


def avg_loss(laws, weights, N, D, d_prime):
    """Weighted average of the per-domain losses at ``(N, D, D_k=d_prime)``."""
    laws = _as_laws(laws)
    w = _weights(laws, weights)
    N, D, d_prime = (np.asarray(x, dtype=float) for x in (N, D, d_prime))
    if np.any(N <= 0) or np.any(D < 0) or np.any(d_prime < 0):
        raise DomainError("need N > 0 and nonnegative token counts")
    if np.any(D + d_prime <= 0):
        raise DomainError("D + d_prime must be positive")
    total = sum(wi * _split_predict(p.to_vector(), N, D, d_prime) for wi, p in zip(w, laws))
    return float(total) if np.ndim(total) == 0 else total


def golden_section(fun, a: float, b: float, tol: float = 1e-6):
    """Minimize a unimodal ``fun`` on ``[a, b]``; returns the best ``(x, f(x))`` seen."""
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = fun(c), fun(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = fun(d)
    return (c, fc) if fc <= fd else (d, fd)


@dataclass(frozen=True)
class AllocationSolution:
    budget: float
    K: int
    t_s: float
    f_s: float
    d_prime: float
    loss_at_opt: float
    band: tuple[float, float]
    band_eps: float = 0.005
    curve: tuple[np.ndarray, np.ndarray] | None = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        return {
            "budget": self.budget,
            "K": self.K,
            "t_s": self.t_s,
            "f_s": self.f_s,
            "d_prime": self.d_prime,
            "loss_at_opt": self.loss_at_opt,
            "band": list(self.band),
            "band_eps": self.band_eps,
        }


def _band_edge(f, loss, i, step, threshold):
    j = i
    while 0 <= j + step < len(f) and loss[j + step] <= threshold:
        j += step
    if not 0 <= j + step < len(f):
        return float(f[j])
    # linear interpolation between the last inside point and the first outside one
    inside, outside = j, j + step
    t = (threshold - loss[inside]) / (loss[outside] - loss[inside])
    return float(f[inside] + t * (f[outside] - f[inside]))


def solve_allocation(laws, weights, N, K: int, D_T: float, band_eps: float = 0.005, grid_points: int = GRID_POINTS):
    """Pretraining fraction minimizing the average loss under ``D + K*D' = D_T``.

    A uniform scan over the fraction is refined by golden-section search on
    the bracket around the best grid point. Exact ties resolve to the smaller
    fraction, so a budget-independent law yields ``f_s = 0``.
    """
    if D_T <= 0:
        raise DomainError("budget must be positive")
    if K < 1:
        raise DomainError("K must be >= 1")
    laws = _as_laws(laws)

    def loss_at(f):
        f = np.asarray(f, dtype=float)
        return avg_loss(laws, weights, N, f * D_T, (1.0 - f) * D_T / K)

    f = np.linspace(0.0, 1.0, grid_points)
    loss = loss_at(f)
    i = int(np.argmin(loss))
    f_s, best = float(f[i]), float(loss[i])
    lo, hi = f[max(i - 1, 0)], f[min(i + 1, len(f) - 1)]
    f_ref, loss_ref = golden_section(loss_at, lo, hi, tol=1e-6)
    if loss_ref < best:
        f_s, best = float(f_ref), float(loss_ref)

    threshold = best + band_eps
    band = (min(_band_edge(f, loss, i, -1, threshold), f_s), max(_band_edge(f, loss, i, +1, threshold), f_s))
    t_s = f_s * D_T
    return AllocationSolution(
        budget=float(D_T),
        K=K,
        t_s=t_s,
        f_s=f_s,
        d_prime=(D_T - t_s) / K,
        loss_at_opt=best,
        band=band,
        band_eps=band_eps,
        curve=(f, loss),
    )


@dataclass(frozen=True)
class SplitPoint:
    d_split: float
    delta_used: float
    method: str
    residual: float
    flag: str | None = None
    epsilon: float | None = None

    @property
    def crossover(self) -> bool:
        return self.flag is None

    def to_dict(self) -> dict:
        return {
            "d_split": self.d_split,
            "delta_used": self.delta_used,
            "method": self.method,
            "residual": self.residual,
            "flag": self.flag,
            "epsilon": self.epsilon,
        }


def _first_crossing(gap, lo: float, hi: float, xtol: float):
    """Smallest x in ``[lo, hi]`` with ``gap(x) > 0``, assuming a single sign change.

    Returns ``(x, flag)``; ``flag`` marks a gap that is positive everywhere or nowhere.
    """
    if gap(lo) > 0:
        return lo, "split-everywhere"
    if not gap(hi) > 0:
        return hi, "split-nowhere"
    right = lo + min(1.0, hi - lo)
    left = lo
    while not gap(right) > 0:
        left, right = right, min(hi, lo + 2.0 * (right - lo))
    while right - left > min(xtol, 1e-6 * max(1.0, right)):
        mid = 0.5 * (left + right)
        if gap(mid) > 0:
            right = mid
        else:
            left = mid
    return right, None


def minimal_split_point(
    laws,
    weights,
    N,
    K: int,
    delta: float = 1.0,
    d_max: float = 10_000.0,
    method: str = "finite-budget",
    epsilon: float = 1e-3,
) -> SplitPoint:
    """Smallest pretraining budget after which splitting beats more pretraining.

    ``finite-budget`` compares spending the next ``delta`` tokens on shared
    pretraining against spending them as ``delta/K`` per domain.
    ``epsilon-derivative`` compares ``K * dL/dD`` with ``dL/dD'`` at
    ``D' = epsilon``, searching ``D`` in ``[epsilon, d_max]``, since both
    marginals diverge at zero tokens.

    When no crossover exists in range the boundary is returned with ``flag`` set.
    """
    laws = _as_laws(laws)
    if delta <= 0:
        raise DomainError("delta must be positive")
    if d_max <= delta:
        raise DomainError("d_max must exceed delta")
    xtol = 1e-4 * d_max

    if method == "finite-budget":

        def gap(D):
            return avg_loss(laws, weights, N, D + delta, 0.0) - avg_loss(laws, weights, N, D, delta / K)

        d, flag = _first_crossing(gap, 0.0, d_max, xtol)
        return SplitPoint(d, delta, method, float(gap(d)), flag)

    if method == "epsilon-derivative":
        w = _weights(laws, weights)

        def gap(D):
            dD = dDk = 0.0
            for wi, p in zip(w, laws):
                a, b = partials_tokens(p, N, D, epsilon)
                dD += wi * a
                dDk += wi * b
            return K * dD - dDk

        d, flag = _first_crossing(gap, epsilon, d_max, xtol)
        return SplitPoint(d, delta, method, float(gap(d)), flag, epsilon)

    raise ValueError(f"unknown method {method!r}")


def compute_multiplier(laws, weights, N, K: int, D_T: float, D_cap: float = 1e6, band_eps: float = 0.005) -> float:
    """Pretraining-only tokens needed to match the optimal split loss, as a multiple of ``D_T``.

    Returns ``math.inf`` when even ``D_cap`` tokens of pretraining cannot reach it.
    """
    best = solve_allocation(laws, weights, N, K, D_T, band_eps).loss_at_opt

    def pretrain_only(D):
        return avg_loss(laws, weights, N, D, 0.0)

    if pretrain_only(D_T) <= best:
        return 1.0
    if pretrain_only(D_cap) > best:
        return math.inf
    lo, hi = math.log(D_T), math.log(D_cap)
    while hi - lo > 1e-12:
        mid = 0.5 * (lo + hi)
        if pretrain_only(math.exp(mid)) > best:
            lo = mid
        else:
            hi = mid
    return math.exp(hi) / D_T


@dataclass(frozen=True)
class PowerLawFit:
    a: float
    b: float
    r2: float

    def __call__(self, N):
        return self.a * np.asarray(N, dtype=float) ** self.b

    def to_dict(self) -> dict:
        return {"a": self.a, "b": self.b, "r2": self.r2}


def fit_power_law(points: Sequence[tuple[float, float]]) -> PowerLawFit:
    """Least-squares line through ``(log N, log f)``; ``f = a * N**b``."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] != 2:
        raise DegenerateError("need at least two (N, f) points")
    if np.any(pts <= 0):
        raise DegenerateError("power-law fit needs N > 0 and f > 0")
    x, y = np.log(pts[:, 0]), np.log(pts[:, 1])
    if np.ptp(x) == 0:
        raise DegenerateError("all N are equal")
    X = np.column_stack([np.ones_like(x), x])
    (intercept, slope), *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - (intercept + slope * x)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / ss_tot if ss_tot > 0 else 1.0
    return PowerLawFit(float(math.exp(intercept)), float(slope), r2)


@dataclass(frozen=True)
class Extrapolation:
    target_N: float
    f_s: float
    clamped: bool
    fit: PowerLawFit
    sources: tuple[tuple[float, float, tuple[float, float]], ...]

    def to_dict(self) -> dict:
        return {
            "sources": [{"N": n, "f_s": f, "band": list(band)} for n, f, band in self.sources],
            "fit": self.fit.to_dict(),
            "target": {"N": self.target_N, "f_s": self.f_s, "clamped": self.clamped},
        }


def extrapolate_fraction(per_size_laws, target_N, K: int, D_T: float, band_eps: float = 0.005) -> Extrapolation:
    """Predict the optimal pretraining fraction at a larger size from per-size laws.

    Each source law is solved at its own size, a power law is fitted across
    sizes, and its value at ``target_N`` is clamped to ``[0, 1]``.
    """
    sources = sorted((float(n), p) for n, p in per_size_laws)
    if len({n for n, _ in sources}) < 2:
        raise DegenerateError("need at least two distinct source sizes")
    if any(n >= target_N for n, _ in sources):
        raise DomainError("every source size must be smaller than the target size")
    solved = []
    for n, p in sources:
        sol = solve_allocation([p], None, n, K, D_T, band_eps)
        solved.append((n, sol.f_s, sol.band))
    fit = fit_power_law([(n, f) for n, f, _ in solved])
    raw = float(fit(target_N))
    f_s = min(max(raw, 0.0), 1.0)
    return Extrapolation(float(target_N), f_s, f_s != raw, fit, tuple(solved))
