"""Scaling-law families: split training, Chinchilla, and the Liew continued-pretraining law.

Token counts are in billions throughout; model sizes are raw parameter counts.
Every family is represented twice: a frozen dataclass of named parameters for
callers, and a :class:`LawFamily` working on flat parameter vectors for the
fitter, which needs vectorized predictions and Jacobians over many records.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DomainError, InputError, SingularityError
from .transforms import (
    BOUNDED_EXPONENT,
    SCALED_SIGMOID,
    SOFTPLUS,
    TransformSpec,
    inverse_transform,
    transform,
)


class _VectorMixin:
    @classmethod
    def names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in dataclasses.fields(cls))

    def to_vector(self) -> np.ndarray:
        return np.array(dataclasses.astuple(self), dtype=float)

    @classmethod
    def from_vector(cls, v):
        return cls(*(float(x) for x in v))

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class SplitLawParams(_VectorMixin):
    E_p: float
    E_0: float
    N_s: float
    D_s: float
    A: float
    B: float
    gamma1: float
    gamma2: float
    alpha1: float
    alpha2: float
    c: float
    kappa: float


@dataclass(frozen=True)
class ChinchillaParams(_VectorMixin):
    E: float
    A: float
    alpha: float
    B: float
    beta: float


@dataclass(frozen=True)
class LiewParams(_VectorMixin):
    E: float
    A: float
    alpha1: float
    alpha2: float
    alpha3: float
    B: float
    beta: float


_POS = TransformSpec(SOFTPLUS)


def _sig(lo, hi):
    return TransformSpec(SCALED_SIGMOID, lo, hi)


def _exp(lo=0.1, hi=1.0):
    return TransformSpec(BOUNDED_EXPONENT, lo, hi)


SPLIT_TRANSFORMS = (
    _POS,  # E_p
    _sig(1.0, 3.0),  # E_0
    _sig(1e7, 1e11),  # N_s
    _sig(500.0, 700.0),  # D_s
    _POS,  # A
    _POS,  # B
    _exp(),  # gamma1
    _exp(),  # gamma2
    _exp(),  # alpha1
    _exp(),  # alpha2
    _sig(0.5, 4.0),  # c
    _exp(),  # kappa
)
CHINCHILLA_TRANSFORMS = (_POS, _POS, _exp(0.0, 1.0), _POS, _exp(0.0, 1.0))
LIEW_TRANSFORMS = (_POS, _POS, _exp(0.0, 1.0), _exp(0.0, 1.0), _sig(-1.0, 1.0), _POS, _exp(0.0, 1.0))


# ---------------------------------------------------------------------------
# vectorized kernels (no argument checking; theta is a flat constrained vector)


def _safe_log(x):
    return np.log(np.where(x > 0, x, 1.0))


def _split_predict(theta, N, D, Dk):
    E_p, E_0, N_s, D_s, A, B, g1, g2, a1, a2, c, k = theta
    s1 = 1.0 / (1.0 + (N / N_s) ** g1)
    s2 = 1.0 / (1.0 + (Dk / D_s) ** g2)
    S = Dk**a1 + c * D**a2
    return E_0 + E_p * s1 * s2 + A / S + B * N ** (-k)


def _split_jacobian(theta, N, D, Dk):
    E_p, E_0, N_s, D_s, A, B, g1, g2, a1, a2, c, k = theta
    u = (N / N_s) ** g1
    v = (Dk / D_s) ** g2
    s1 = 1.0 / (1.0 + u)
    s2 = 1.0 / (1.0 + v)
    dk_pow = Dk**a1
    d_pow = D**a2
    S = dk_pow + c * d_pow
    size = N ** (-k)
    dS = -A / S**2
    ones = np.ones_like(S)
    return np.stack(
        [
            s1 * s2,
            ones,
            E_p * s2 * s1**2 * u * g1 / N_s,
            E_p * s1 * s2**2 * v * g2 / D_s,
            1.0 / S,
            size * ones,
            -E_p * s2 * s1**2 * u * np.log(N / N_s),
            np.where(Dk > 0, -E_p * s1 * s2**2 * v * _safe_log(Dk / D_s), 0.0),
            np.where(Dk > 0, dS * dk_pow * _safe_log(Dk), 0.0),
            np.where(D > 0, dS * c * d_pow * _safe_log(D), 0.0),
            dS * d_pow,
            -B * size * np.log(N) * ones,
        ],
        axis=-1,
    )


def _chinchilla_predict(theta, N, D, Dk=None):
    E, A, alpha, B, beta = theta
    return E + A * N ** (-alpha) + B * D ** (-beta)


def _chinchilla_jacobian(theta, N, D, Dk=None):
    E, A, alpha, B, beta = theta
    n_term = N ** (-alpha)
    d_term = D ** (-beta)
    n_term, d_term = np.broadcast_arrays(n_term, d_term)
    return np.stack(
        [np.ones_like(n_term), n_term, -A * n_term * np.log(N), d_term, -B * d_term * np.log(D)],
        axis=-1,
    )


def _liew_data_term(theta, D, Dp):
    E, A, a1, a2, a3, B, beta = theta
    log_dp = np.log(Dp)
    return A * np.exp(-a1 * log_dp + (-a2 + a3 * log_dp) * np.log(D))


def _liew_predict(theta, N, D, Dp):
    E, A, a1, a2, a3, B, beta = theta
    return E + _liew_data_term(theta, D, Dp) + B * N ** (-beta)


def _liew_jacobian(theta, N, D, Dp):
    E, A, a1, a2, a3, B, beta = theta
    T = _liew_data_term(theta, D, Dp)
    log_dp, log_d = np.log(Dp), np.log(D)
    size = N ** (-beta) * np.ones_like(T)
    return np.stack(
        [np.ones_like(T), T / A, -T * log_dp, -T * log_d, T * log_dp * log_d, size, -B * size * np.log(N)],
        axis=-1,
    )


# ---------------------------------------------------------------------------
# law families


@dataclass(frozen=True)
class LawFamily:
    """Flat-vector view of one scaling-law family.

    All kernels take ``(theta, N, D, Dk)`` where ``D`` is pretraining tokens and
    ``Dk`` continued-pretraining tokens of a run; :meth:`inputs` adapts a run
    to what the family actually consumes.
    """

    name: str
    param_cls: type
    transforms: tuple[TransformSpec, ...]
    # log-uniform ranges for sampling random starts of softplus parameters
    init_ranges: dict
    predict: Callable
    jacobian: Callable
    inputs: Callable

    @property
    def names(self) -> tuple[str, ...]:
        return self.param_cls.names()

    @property
    def n_params(self) -> int:
        return len(self.transforms)

    def usable(self, N, D, Dk) -> np.ndarray:
        """Mask of runs inside the family's domain."""
        N, D, Dk = (np.asarray(a, dtype=float) for a in (N, D, Dk))
        if self.name == "liew":
            return (N > 0) & (D > 0) & (Dk > 0)
        if self.name == "chinchilla":
            return (N > 0) & (D + Dk > 0)
        return (N > 0) & (D >= 0) & (Dk >= 0) & (D + Dk > 0)

    def to_params(self, theta):
        return self.param_cls.from_vector(theta)

    def random_raw(self, rng: np.random.Generator) -> np.ndarray:
        raw = np.empty(self.n_params)
        for i, (name, spec) in enumerate(zip(self.names, self.transforms)):
            if spec.kind == SOFTPLUS:
                lo, hi = self.init_ranges[name]
                value = np.exp(rng.uniform(np.log(lo), np.log(hi)))
                raw[i] = inverse_transform([value], [spec])[0]
            else:
                raw[i] = rng.uniform(-2.5, 2.5)
        return raw


SPLIT = LawFamily(
    name="split",
    param_cls=SplitLawParams,
    transforms=SPLIT_TRANSFORMS,
    init_ranges={"E_p": (0.01, 2.0), "A": (0.1, 100.0), "B": (1.0, 1e4)},
    predict=_split_predict,
    jacobian=_split_jacobian,
    inputs=lambda N, D, Dk: (N, D, Dk),
)
CHINCHILLA = LawFamily(
    name="chinchilla",
    param_cls=ChinchillaParams,
    transforms=CHINCHILLA_TRANSFORMS,
    init_ranges={"E": (0.5, 3.0), "A": (1.0, 1e4), "B": (0.1, 100.0)},
    predict=_chinchilla_predict,
    jacobian=_chinchilla_jacobian,
    # baseline sees total tokens; it has no notion of two stages
    inputs=lambda N, D, Dk: (N, D + Dk, None),
)
LIEW = LawFamily(
    name="liew",
    param_cls=LiewParams,
    transforms=LIEW_TRANSFORMS,
    init_ranges={"E": (0.5, 3.0), "A": (0.1, 100.0), "B": (1.0, 1e4)},
    predict=_liew_predict,
    jacobian=_liew_jacobian,
    inputs=lambda N, D, Dk: (N, D, Dk),
)
FAMILIES = {f.name: f for f in (SPLIT, CHINCHILLA, LIEW)}


def get_family(name_or_params) -> LawFamily:
    if isinstance(name_or_params, LawFamily):
        return name_or_params
    if isinstance(name_or_params, str):
        try:
            return FAMILIES[name_or_params]
        except KeyError:
            raise ValueError(f"unknown law family {name_or_params!r}; expected one of {sorted(FAMILIES)}") from None
    for fam in FAMILIES.values():
        if isinstance(name_or_params, fam.param_cls):
            return fam
    raise TypeError(f"not a law parameter set: {type(name_or_params).__name__}")


# ---------------------------------------------------------------------------
# checked scalar/array API


def _arrays(*xs):
    return tuple(np.asarray(x, dtype=float) for x in xs)


def _ret(x):
    return float(x) if np.ndim(x) == 0 else x


def _check_split_inputs(N, D, D_k):
    if np.any(N <= 0):
        raise DomainError("model size N must be positive")
    if np.any(D < 0) or np.any(D_k < 0):
        raise DomainError("token counts must be nonnegative")
    if np.any((D == 0) & (D_k == 0)):
        raise SingularityError("split law is singular at D = D_k = 0")


def eval_bias(params: SplitLawParams, N, D_k):
    """Loss offset separating the pretrain-only floor from the domain floor.

    Equals ``E_p`` scaled by two logistic-type factors, one saturating in
    model size and one in domain tokens.
    """
    N, D_k = _arrays(N, D_k)
    if np.any(N <= 0):
        raise DomainError("model size N must be positive")
    if np.any(D_k < 0):
        raise DomainError("domain tokens must be nonnegative")
    p = params
    out = p.E_p / (1.0 + (N / p.N_s) ** p.gamma1) / (1.0 + (D_k / p.D_s) ** p.gamma2)
    return _ret(out)


def eval_split_law(params: SplitLawParams, N, D, D_k):
    N, D, D_k = _arrays(N, D, D_k)
    _check_split_inputs(N, D, D_k)
    return _ret(_split_predict(params.to_vector(), N, D, D_k))


def eval_chinchilla(params: ChinchillaParams, N, D):
    N, D = _arrays(N, D)
    if np.any(N <= 0) or np.any(D <= 0):
        raise DomainError("Chinchilla law needs N > 0 and D > 0")
    return _ret(_chinchilla_predict(params.to_vector(), N, D))


def eval_liew(params: LiewParams, N, D, D_prime):
    N, D, D_prime = _arrays(N, D, D_prime)
    if np.any(N <= 0):
        raise DomainError("model size N must be positive")
    if np.any(D <= 0) or np.any(D_prime <= 0):
        raise DomainError("Liew law needs D > 0 and D' > 0 (log D' is undefined at 0)")
    return _ret(_liew_predict(params.to_vector(), N, D, D_prime))


def grad_split_law(params: SplitLawParams, N, D, D_k) -> np.ndarray:
    """Gradient of the split law with respect to its 12 parameters, in field order."""
    N, D, D_k = _arrays(N, D, D_k)
    _check_split_inputs(N, D, D_k)
    return _split_jacobian(params.to_vector(), N, D, D_k)


def partials_tokens(params: SplitLawParams, N, D, D_k):
    """Return ``(dL/dD, dL/dD_k)``; both diverge at a zero token count."""
    N, D, D_k = _arrays(N, D, D_k)
    if np.any(N <= 0):
        raise DomainError("model size N must be positive")
    if np.any(D < 0) or np.any(D_k < 0):
        raise DomainError("token counts must be nonnegative")
    if np.any(D == 0) or np.any(D_k == 0):
        raise SingularityError("token partials are singular at D = 0 or D_k = 0")
    p = params
    u = (N / p.N_s) ** p.gamma1
    v = (D_k / p.D_s) ** p.gamma2
    s1 = 1.0 / (1.0 + u)
    s2 = 1.0 / (1.0 + v)
    S = D_k**p.alpha1 + p.c * D**p.alpha2
    dS = -p.A / S**2
    dD = dS * p.c * p.alpha2 * D ** (p.alpha2 - 1.0)
    dDk = -p.E_p * s1 * s2**2 * p.gamma2 * v / D_k + dS * p.alpha1 * D_k ** (p.alpha1 - 1.0)
    return _ret(dD), _ret(dDk)


# ---------------------------------------------------------------------------
# parameter documents


def raw_from_params(params) -> np.ndarray:
    fam = get_family(params)
    return inverse_transform(params.to_vector(), fam.transforms)


def params_from_raw(raw, family) -> object:
    fam = get_family(family)
    return fam.to_params(transform(raw, fam.transforms))


def params_document(params, raw=None, *, seed=None, objective=None) -> dict:
    """JSON-ready description of a parameter set, including each transform."""
    fam = get_family(params)
    values = params.to_vector()
    if raw is None:
        with np.errstate(divide="ignore", invalid="ignore"):
            raw = inverse_transform(values, fam.transforms)
    entries = []
    for name, value, r, spec in zip(fam.names, values, raw, fam.transforms):
        entries.append(
            {
                "name": name,
                "constrained_value": float(value),
                "raw_value": float(r) if np.isfinite(r) else None,
                "transform": spec.to_dict(),
            }
        )
    return {"law": fam.name, "parameters": entries, "fit": {"seed": seed, "objective": objective}}


def params_from_document(doc: dict):
    """Rebuild a parameter dataclass from :func:`params_document` output (or a fit result)."""
    try:
        fam = get_family(doc["law"])
        by_name = {p["name"]: float(p["constrained_value"]) for p in doc["parameters"]}
        missing = [n for n in fam.names if n not in by_name]
        if missing:
            raise InputError(f"parameter document lacks {missing}")
        return fam.param_cls(**{n: by_name[n] for n in fam.names})
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, InputError):
            raise
        raise InputError(f"malformed parameter document: {exc}") from exc
