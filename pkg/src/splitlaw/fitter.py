"""Robust fitting of scaling laws: Huber objective, basin-hopping, fit scoring.

Parameters are optimized in unconstrained space and pushed through each
family's transforms, so every local solve is an unconstrained quasi-Newton
problem.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy.optimize import minimize

from .dataset import Dataset
from .errors import AllChainsFailedError, DegenerateError, NonFiniteObjectiveError
from .laws import LawFamily, get_family, params_document, params_from_raw
from .transforms import transform, transform_jacobian

log = logging.getLogger(__name__)

FunGrad = Callable[[np.ndarray], tuple[float, np.ndarray]]


@dataclass(frozen=True)
class FitConfig:
    huber_delta: float = 1e-3
    n_random_starts: int = 64
    hops_per_start: int = 50
    hop_step: float = 0.5
    accept_temperature: float = 1e-3
    local_max_iter: int = 500
    seed: int = 0

    def __post_init__(self):
        if self.huber_delta <= 0:
            raise ValueError("huber_delta must be > 0")
        for name in ("n_random_starts", "hops_per_start", "local_max_iter"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.hop_step < 0 or self.accept_temperature < 0:
            raise ValueError("hop_step and accept_temperature must be >= 0")


@dataclass(frozen=True)
class Metrics:
    mae: float
    mre: float
    r2: float | None
    pearson_r: float | None
    n: int

    def to_dict(self) -> dict:
        return asdict(self)


def huber(residual, delta: float):
    """Quadratic inside ``|r| <= delta``, linear outside, C1 at the knee."""
    r = np.asarray(residual, dtype=float)
    a = np.abs(r)
    out = np.where(a <= delta, 0.5 * r * r, delta * (a - 0.5 * delta))
    return float(out) if out.ndim == 0 else out


def huber_grad(residual, delta: float):
    r = np.asarray(residual, dtype=float)
    return np.clip(r, -delta, delta)


class HuberObjective:
    """Sum of Huber penalties of a law's residuals on a dataset, as a function of raw parameters.

    Runs outside the family's domain (for the Liew law, runs without continued
    pretraining) are dropped; ``n_dropped`` records how many.
    """

    def __init__(self, ds: Dataset, law, delta: float = 1e-3):
        if len(ds) == 0:
            raise DegenerateError("cannot fit an empty dataset")
        self.family: LawFamily = get_family(law)
        self.delta = delta
        N, D, Dk, y = ds.arrays()
        mask = self.family.usable(N, D, Dk)
        self.n_dropped = int((~mask).sum())
        if not mask.any():
            raise DegenerateError(f"no runs inside the domain of the {self.family.name} law")
        self.inputs = self.family.inputs(N[mask], D[mask], Dk[mask])
        self.y = y[mask]

    @property
    def n(self) -> int:
        return len(self.y)

    def __call__(self, raw) -> float:
        theta = transform(raw, self.family.transforms)
        with np.errstate(all="ignore"):
            r = self.family.predict(theta, *self.inputs) - self.y
            return float(np.sum(huber(r, self.delta)))

    def value_and_grad(self, raw) -> tuple[float, np.ndarray]:
        raw = np.asarray(raw, dtype=float)
        specs = self.family.transforms
        theta = transform(raw, specs)
        with np.errstate(all="ignore"):
            r = self.family.predict(theta, *self.inputs) - self.y
            value = float(np.sum(huber(r, self.delta)))
            jac = self.family.jacobian(theta, *self.inputs)
            grad = (huber_grad(r, self.delta) @ jac) * transform_jacobian(raw, specs)
        return value, grad


def objective(raw, ds: Dataset, law, delta: float = 1e-3) -> float:
    return HuberObjective(ds, law, delta)(raw)


class LocalSolution(NamedTuple):
    x: np.ndarray
    fun: float
    grad_norm: float
    n_iter: int
    stationary: bool


def minimize_local(fun_grad: FunGrad, x0, max_iter: int = 500) -> LocalSolution:
    """Quasi-Newton descent from ``x0``; never returns a point worse than ``x0``.

    ``stationary`` is true when the gradient max-norm is at most
    ``1e-6 * (1 + |f|)``; otherwise the iteration budget or the line search ran out.
    """
    x0 = np.asarray(x0, dtype=float)
    f0, g0 = fun_grad(x0)
    if not math.isfinite(f0) or not np.all(np.isfinite(g0)):
        raise NonFiniteObjectiveError("objective is not finite at the starting point")
    best = [f0, x0.copy(), np.asarray(g0, dtype=float)]

    def wrapped(x):
        f, g = fun_grad(x)
        if not math.isfinite(f) or not np.all(np.isfinite(g)):
            # steer the line search back into the finite region
            return 1e300, np.zeros_like(x)
        if f < best[0]:
            best[:] = [f, x.copy(), np.asarray(g, dtype=float)]
        return f, g

    n_iter = 0
    if np.max(np.abs(g0), initial=0.0) > 1e-6 * (1.0 + abs(f0)):
        # Solve well past the reporting threshold. scipy's ftol test is absolute
        # once |f| < 1, which stalls near-exact fits, so it is switched off.
        res = minimize(
            wrapped,
            x0,
            jac=True,
            method="L-BFGS-B",
            options={"maxiter": max_iter, "maxfun": 4 * max_iter, "gtol": 1e-8, "ftol": 0.0, "maxcor": 20},
        )
        n_iter = int(res.nit)
    f, x, g = best
    gnorm = float(np.max(np.abs(g), initial=0.0))
    return LocalSolution(x, f, gnorm, n_iter, gnorm <= 1e-6 * (1.0 + abs(f)))


def fit_local(init_raw, ds: Dataset, law, config: FitConfig = FitConfig()) -> LocalSolution:
    obj = HuberObjective(ds, law, config.huber_delta)
    return minimize_local(obj.value_and_grad, init_raw, config.local_max_iter)


class ChainResult(NamedTuple):
    index: int
    x: np.ndarray | None
    fun: float
    n_solves: int
    n_failed: int


def _run_chain(index, fun_grad, x0, rng, config: FitConfig) -> ChainResult:
    x_cur, f_cur = None, math.inf
    x_best, f_best = None, math.inf
    n_solves = n_failed = 0
    for hop in range(config.hops_per_start):
        anchor = x0 if x_cur is None else x_cur
        start = anchor if hop == 0 else anchor + rng.uniform(-config.hop_step, config.hop_step, size=anchor.shape)
        try:
            sol = minimize_local(fun_grad, start, config.local_max_iter)
        except (NonFiniteObjectiveError, FloatingPointError, ValueError) as exc:
            log.debug("chain %d hop %d failed: %s", index, hop, exc)
            n_failed += 1
            continue
        finally:
            n_solves += 1
        accept = x_cur is None or sol.fun <= f_cur
        if not accept and config.accept_temperature > 0:
            accept = rng.random() < math.exp(-(sol.fun - f_cur) / config.accept_temperature)
        if accept:
            x_cur, f_cur = sol.x, sol.fun
        if sol.fun < f_best:
            x_best, f_best = sol.x, sol.fun
    return ChainResult(index, x_best, f_best, n_solves, n_failed)


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("SPLITLAW_THREADS", "1")))
    except ValueError:
        return 1


def basin_hopping(fun_grad: FunGrad, sample_start: Callable[[np.random.Generator], np.ndarray], config: FitConfig):
    """Independent Metropolis basin-hopping chains; returns ``(x, fun, n_local_solves)``.

    Chain ``i`` draws its start and every perturbation from its own generator,
    spawned from ``config.seed``. The first hop of a chain is the local solve
    from its start, so ``hops_per_start`` counts local solves per chain.
    Ties between chains go to the lowest chain index, which keeps the result
    independent of scheduling.
    """
    seeds = np.random.SeedSequence(config.seed).spawn(config.n_random_starts)

    def chain(i):
        rng = np.random.default_rng(seeds[i])
        x0 = np.asarray(sample_start(rng), dtype=float)
        return _run_chain(i, fun_grad, x0, rng, config)

    workers = min(_threads(), config.n_random_starts)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(chain, range(config.n_random_starts)))
    else:
        results = [chain(i) for i in range(config.n_random_starts)]

    n_solves = sum(r.n_solves for r in results)
    ok = [r for r in results if r.x is not None]
    if not ok:
        raise AllChainsFailedError(f"all {config.n_random_starts} chains failed")
    best = min(ok, key=lambda r: (r.fun, r.index))
    return best.x, best.fun, n_solves


@dataclass(frozen=True)
class FitResult:
    law: str
    params: object
    raw: np.ndarray
    objective: float
    train_metrics: Metrics
    test_metrics: Metrics | None
    n_local_solves: int
    seed: int
    config: FitConfig
    n_dropped: int = 0

    def to_dict(self) -> dict:
        doc = params_document(self.params, self.raw, seed=self.seed, objective=self.objective)
        doc["fit"].update({"n_local_solves": self.n_local_solves, "n_dropped": self.n_dropped})
        doc["metrics"] = {
            "train": self.train_metrics.to_dict(),
            "test": self.test_metrics.to_dict() if self.test_metrics else None,
        }
        doc["config"] = asdict(self.config)
        return doc


def fit_basin_hopping(ds: Dataset, law, config: FitConfig = FitConfig(), test: Dataset | None = None) -> FitResult:
    fam = get_family(law)
    obj = HuberObjective(ds, fam, config.huber_delta)
    x, fun, n_solves = basin_hopping(obj.value_and_grad, fam.random_raw, config)
    params = params_from_raw(x, fam)
    return FitResult(
        law=fam.name,
        params=params,
        raw=x,
        objective=fun,
        train_metrics=evaluate(params, fam, ds),
        test_metrics=evaluate(params, fam, test) if test is not None and len(test) else None,
        n_local_solves=n_solves,
        seed=config.seed,
        config=config,
        n_dropped=obj.n_dropped,
    )


def metrics(pred, y) -> Metrics:
    pred = np.asarray(pred, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(y) == 0:
        raise DegenerateError("no runs to score")
    err = pred - y
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(err**2)) / ss_tot if ss_tot > 0 else None
    if len(y) > 1 and np.ptp(y) > 0 and np.ptp(pred) > 0:
        r = float(np.corrcoef(pred, y)[0, 1])
        r = max(-1.0, min(1.0, r))
    else:
        r = None
    return Metrics(float(np.mean(np.abs(err))), float(np.mean(np.abs(err) / y)), r2, r, len(y))


def evaluate(params, law, ds: Dataset) -> Metrics:
    """MAE, MRE, R^2 and Pearson r of a law on the runs inside its domain.

    R^2 and r are ``None`` when the targets (or predictions) are constant.
    """
    fam = get_family(law)
    N, D, Dk, y = ds.arrays()
    mask = fam.usable(N, D, Dk)
    pred = fam.predict(params.to_vector(), *fam.inputs(N[mask], D[mask], Dk[mask]))
    return metrics(pred, y[mask])
