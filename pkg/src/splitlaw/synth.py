"""Synthetic fixtures with known ground truth: run grids from a split law, Gaussian embedding blobs."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist

from .cluster import EmbeddingSet
from .dataset import Dataset, RunRecord
from .errors import InvalidGridError
from .laws import SplitLawParams, eval_split_law

# Ground truth used by the default fixtures. Losses land in roughly
# [2.4, 3.8] nats over the default grid.
REFERENCE_PARAMS = SplitLawParams(
    E_p=0.6,
    E_0=1.8,
    N_s=1e9,
    D_s=600.0,
    A=2.0,
    B=200.0,
    gamma1=0.5,
    gamma2=0.5,
    alpha1=0.4,
    alpha2=0.35,
    c=1.5,
    kappa=0.3,
)

MODEL_SIZES = (100_000_000, 350_000_000, 760_000_000, 1_300_000_000, 2_700_000_000)


@dataclass(frozen=True)
class GridSpec:
    sizes: tuple[int, ...]
    pt_grid: tuple[float, ...]
    cpt_grid: tuple[float, ...]
    noise_sigma: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if not self.sizes or not self.pt_grid or not self.cpt_grid:
            raise InvalidGridError("grids must be nonempty")
        if self.noise_sigma < 0:
            raise InvalidGridError("noise_sigma must be >= 0")
        if any(n <= 0 for n in self.sizes):
            raise InvalidGridError("model sizes must be positive")
        if any(d < 0 for d in self.pt_grid) or any(d < 0 for d in self.cpt_grid):
            raise InvalidGridError("token counts must be nonnegative")


def default_grid(noise_sigma: float = 0.01, seed: int = 0, sizes=MODEL_SIZES) -> GridSpec:
    """Five sizes, ten log-spaced PT budgets in [5, 200]B, five CPT budgets in [0, 30]B."""
    pt = tuple(float(x) for x in np.geomspace(5.0, 200.0, 10))
    cpt = tuple(float(x) for x in np.linspace(0.0, 30.0, 5))
    return GridSpec(tuple(sizes), pt, cpt, noise_sigma, seed)


def generate_runs(params: SplitLawParams, grid: GridSpec, domain_id: int = 0, lo=0.5, hi=4.0) -> Dataset:
    """One run per (size, PT, CPT) cell with loss = law + N(0, sigma^2) noise."""
    cells = [(n, d, dk) for n in grid.sizes for d in grid.pt_grid for dk in grid.cpt_grid]
    if any(d + dk <= 0 for _, d, dk in cells):
        raise InvalidGridError("grid contains a cell with zero pretraining and zero continued-pretraining tokens")
    N = np.array([c[0] for c in cells], dtype=float)
    D = np.array([c[1] for c in cells])
    Dk = np.array([c[2] for c in cells])
    rng = np.random.default_rng(grid.seed)
    loss = np.atleast_1d(eval_split_law(params, N, D, Dk)) + rng.normal(0.0, grid.noise_sigma, size=len(cells))
    outside = int(np.sum((loss < lo) | (loss > hi)))
    if outside:
        warnings.warn(f"{outside} generated losses fall outside [{lo}, {hi}] and would be filtered", stacklevel=2)
    if np.any(loss <= 0):
        raise InvalidGridError("noise produced nonpositive losses; lower noise_sigma")
    records = tuple(
        RunRecord(int(n), float(d), float(dk), domain_id, float(y), "synth") for (n, d, dk), y in zip(cells, loss)
    )
    return Dataset(records, domain_id + 1)


def generate_blobs(K: int, n_per_cluster: int, d: int, separation: float, noise: float, seed: int = 0):
    """Gaussian clusters with centers at least ``separation`` apart.

    Documents scatter around their center with per-coordinate std ``noise``;
    prefixes are their document plus fresh noise of the same scale.
    Returns ``(docs, prefixes, labels)``.
    """
    if separation <= 0:
        raise ValueError("separation must be > 0")
    if K < 1 or n_per_cluster < 1 or d < 1:
        raise ValueError("K, n_per_cluster and d must be >= 1")
    rng = np.random.default_rng(seed)
    centers = rng.normal(size=(K, d))
    if K > 1:
        centers *= separation / pdist(centers).min()
    labels = np.repeat(np.arange(K), n_per_cluster)
    docs = centers[labels] + noise * rng.normal(size=(len(labels), d))
    prefixes = docs + noise * rng.normal(size=docs.shape)
    ids = [f"doc{i:06d}" for i in range(len(labels))]
    return EmbeddingSet(docs, ids), EmbeddingSet(prefixes, ids), labels
