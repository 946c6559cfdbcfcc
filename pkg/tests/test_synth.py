import warnings

import numpy as np
import pytest
from scipy.spatial.distance import pdist

from splitlaw.cluster import balanced_kmeans
from splitlaw.dataset import filter_outliers, parse_runs, to_csv
from splitlaw.errors import InvalidGridError
from splitlaw.laws import eval_split_law
from splitlaw.synth import MODEL_SIZES, REFERENCE_PARAMS, GridSpec, generate_blobs, generate_runs, default_grid
from test_cluster import match_accuracy


class TestRuns:
    def test_noiseless(self):
        ds = generate_runs(REFERENCE_PARAMS, default_grid(0.0))
        N, D, Dk, y = ds.arrays()
        assert np.array_equal(y, eval_split_law(REFERENCE_PARAMS, N, D, Dk))

    def test_default_grid_shape(self):
        ds = generate_runs(REFERENCE_PARAMS, default_grid())
        assert len(ds) == 5 * 10 * 5
        assert ds.sizes == list(MODEL_SIZES)
        _, D, Dk, _ = ds.arrays()
        assert D.min() == pytest.approx(5.0) and D.max() == pytest.approx(200.0)
        assert sorted(set(Dk)) == [0.0, 7.5, 15.0, 22.5, 30.0]

    def test_deterministic(self):
        a = generate_runs(REFERENCE_PARAMS, default_grid(0.01, seed=8))
        b = generate_runs(REFERENCE_PARAMS, default_grid(0.01, seed=8))
        assert a == b
        assert a != generate_runs(REFERENCE_PARAMS, default_grid(0.01, seed=9))

    def test_noise_is_centered(self):
        sigma = 0.01
        grid = default_grid(sigma, seed=21, sizes=MODEL_SIZES[:4])
        ds = generate_runs(REFERENCE_PARAMS, grid)
        N, D, Dk, y = ds.arrays()
        assert len(ds) == 200
        assert abs(np.mean(y - eval_split_law(REFERENCE_PARAMS, N, D, Dk))) <= 3 * sigma / np.sqrt(200)

    def test_passes_dataset_invariants(self):
        ds = generate_runs(REFERENCE_PARAMS, default_grid(0.01))
        assert parse_runs(to_csv(ds)) == ds
        assert filter_outliers(ds)[1] == 0

    def test_warns_out_of_range(self):
        with pytest.warns(UserWarning, match="outside"):
            generate_runs(REFERENCE_PARAMS.replace(E_0=3.0, B=500.0), default_grid(0.0))
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            generate_runs(REFERENCE_PARAMS, default_grid(0.0))

    def test_all_zero_cell(self):
        with pytest.raises(InvalidGridError):
            generate_runs(REFERENCE_PARAMS, GridSpec((10**9,), (0.0, 5.0), (0.0, 1.0)))

    @pytest.mark.parametrize(
        "kw", [dict(sizes=()), dict(noise_sigma=-1.0), dict(pt_grid=(-1.0,)), dict(sizes=(0,))]
    )
    def test_invalid_grid(self, kw):
        base = dict(sizes=(10**9,), pt_grid=(5.0,), cpt_grid=(1.0,))
        base.update(kw)
        with pytest.raises(InvalidGridError):
            GridSpec(**base)


class TestBlobs:
    def test_noiseless_prefixes(self):
        docs, prefixes, _ = generate_blobs(3, 10, 4, separation=5.0, noise=0.0, seed=0)
        assert np.array_equal(docs.vectors, prefixes.vectors)
        assert docs.ids == prefixes.ids

    def test_single_cluster(self):
        _, _, labels = generate_blobs(1, 25, 3, separation=1.0, noise=0.1)
        assert set(labels) == {0}

    def test_separation(self):
        for seed in range(10):
            docs, _, labels = generate_blobs(6, 5, 3, separation=7.0, noise=0.0, seed=seed)
            centers = np.array([docs.vectors[labels == k][0] for k in range(6)])
            assert pdist(centers).min() >= 7.0 - 1e-9

    def test_deterministic(self):
        a = generate_blobs(4, 20, 5, 10.0, 0.5, seed=3)
        b = generate_blobs(4, 20, 5, 10.0, 0.5, seed=3)
        assert a[0].vectors.tobytes() == b[0].vectors.tobytes()
        assert a[1].vectors.tobytes() == b[1].vectors.tobytes()

    @pytest.mark.parametrize("seed", range(5))
    def test_recovered_by_kmeans(self, seed):
        noise = 0.5
        docs, _, labels = generate_blobs(4, 100, 16, separation=20 * noise, noise=noise, seed=seed)
        m = balanced_kmeans(docs, 4, seed=seed)
        assert match_accuracy(m.labels, labels) == 1.0

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            generate_blobs(2, 5, 2, separation=0.0, noise=1.0)
        with pytest.raises(ValueError):
            generate_blobs(0, 5, 2, separation=1.0, noise=1.0)
