"""Smooth bijections between unconstrained optimizer variables and bounded parameters."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import expit, logit

SOFTPLUS = "softplus-positive"
SCALED_SIGMOID = "scaled-sigmoid"
BOUNDED_EXPONENT = "bounded-exponent"
KINDS = (SOFTPLUS, SCALED_SIGMOID, BOUNDED_EXPONENT)


@dataclass(frozen=True)
class TransformSpec:
    kind: str
    lower: float = 0.0
    upper: float = float("inf")

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown transform kind {self.kind!r}")
        if self.kind != SOFTPLUS and not self.lower < self.upper:
            raise ValueError(f"bounded transform needs lower < upper, got [{self.lower}, {self.upper}]")

    @property
    def bounded(self) -> bool:
        return self.kind != SOFTPLUS

    def to_dict(self) -> dict:
        upper = None if not self.bounded else self.upper
        return {"kind": self.kind, "lower": self.lower, "upper": upper}

    @classmethod
    def from_dict(cls, d: dict) -> "TransformSpec":
        upper = d.get("upper")
        return cls(d["kind"], float(d.get("lower", 0.0)), float("inf") if upper is None else float(upper))


def softplus(x):
    return np.logaddexp(0.0, x)


def inverse_softplus(y):
    # log(expm1(y)) without overflow for large y
    y = np.asarray(y, dtype=float)
    return y + np.log(-np.expm1(-y))


def _apply(raw, specs, fn):
    raw = np.asarray(raw, dtype=float)
    if raw.shape[-1] != len(specs):
        raise ValueError(f"expected {len(specs)} entries, got {raw.shape[-1]}")
    out = np.empty_like(raw)
    for i, spec in enumerate(specs):
        out[..., i] = fn(raw[..., i], spec)
    return out


def _forward(r, spec):
    if spec.kind == SOFTPLUS:
        return softplus(r)
    return spec.lower + (spec.upper - spec.lower) * expit(r)


def _inverse(y, spec):
    if spec.kind == SOFTPLUS:
        return inverse_softplus(y)
    return logit((y - spec.lower) / (spec.upper - spec.lower))


def _derivative(r, spec):
    if spec.kind == SOFTPLUS:
        return expit(r)
    s = expit(r)
    return (spec.upper - spec.lower) * s * (1.0 - s)


def transform(raw, specs: Sequence[TransformSpec]) -> np.ndarray:
    """Map unconstrained values to their constrained counterparts, entry by entry."""
    return _apply(raw, specs, _forward)


def inverse_transform(values, specs: Sequence[TransformSpec]) -> np.ndarray:
    """Inverse of :func:`transform`. Values must lie strictly inside each range."""
    return _apply(values, specs, _inverse)


def transform_jacobian(raw, specs: Sequence[TransformSpec]) -> np.ndarray:
    """Elementwise derivative d transform / d raw (the Jacobian is diagonal)."""
    return _apply(raw, specs, _derivative)
