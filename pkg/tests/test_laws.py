import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_split_params
from splitlaw.errors import DomainError, SingularityError
from splitlaw.laws import (
    CHINCHILLA,
    LIEW,
    SPLIT,
    ChinchillaParams,
    LiewParams,
    SplitLawParams,
    eval_bias,
    eval_chinchilla,
    eval_liew,
    eval_split_law,
    grad_split_law,
    params_document,
    params_from_document,
    partials_tokens,
)
from splitlaw.synth import REFERENCE_PARAMS
from splitlaw.transforms import (
    BOUNDED_EXPONENT,
    SCALED_SIGMOID,
    SOFTPLUS,
    TransformSpec,
    inverse_transform,
    transform,
    transform_jacobian,
)

BIG = 1e250  # stands in for infinity; see test_desiderata


def straight_line_split(p, N, D, Dk):
    # independent re-implementation, scalar math only
    bias = p.E_p * (1.0 / (1.0 + math.pow(N / p.N_s, p.gamma1))) * (1.0 / (1.0 + math.pow(Dk / p.D_s, p.gamma2)))
    data = p.A / (math.pow(Dk, p.alpha1) + p.c * math.pow(D, p.alpha2))
    return p.E_0 + bias + data + p.B * math.pow(N, -p.kappa)


class TestTransforms:
    def test_softplus_at_zero(self):
        assert transform([0.0], [TransformSpec(SOFTPLUS)])[0] == pytest.approx(math.log(2.0), abs=1e-15)

    def test_scaled_sigmoid_midpoint(self):
        assert transform([0.0], [TransformSpec(SCALED_SIGMOID, 1.0, 3.0)])[0] == pytest.approx(2.0)

    def test_round_trip_random(self, rng):
        specs = list(SPLIT.transforms)
        raw = rng.normal(0.0, 2.0, size=(100, len(specs)))
        back = inverse_transform(transform(raw, specs), specs)
        np.testing.assert_allclose(back, raw, rtol=1e-10, atol=1e-10)

    @given(st.floats(-15, 15), st.sampled_from([SOFTPLUS, SCALED_SIGMOID, BOUNDED_EXPONENT]))
    def test_strictly_monotone_and_in_range(self, x, kind):
        spec = TransformSpec(kind, 0.1, 1.0) if kind != SOFTPLUS else TransformSpec(kind)
        y0, y1 = transform([x], [spec])[0], transform([x + 0.01], [spec])[0]
        assert y1 > y0
        assert y0 > spec.lower
        if spec.bounded:
            assert y0 < spec.upper

    def test_jacobian_matches_finite_differences(self, rng):
        specs = list(SPLIT.transforms)
        raw = rng.normal(size=len(specs))
        h = 1e-6
        fd = (transform(raw + h, specs) - transform(raw - h, specs)) / (2 * h)
        np.testing.assert_allclose(transform_jacobian(raw, specs), fd, rtol=1e-6)

    def test_bad_bounds_rejected(self):
        with pytest.raises(ValueError):
            TransformSpec(SCALED_SIGMOID, 3.0, 1.0)


class TestBias:
    def test_half_saturation(self):
        p = REFERENCE_PARAMS.replace(E_p=1.0, N_s=2e9)
        assert eval_bias(p, 2e9, 0.0) == pytest.approx(0.5)

    def test_zero_offset(self):
        assert eval_bias(REFERENCE_PARAMS.replace(E_p=0.0), 3e8, 12.0) == 0.0

    def test_hand_value(self):
        p = REFERENCE_PARAMS.replace(E_p=1.0, N_s=1e9, D_s=600.0, gamma1=0.5, gamma2=0.5)
        # 1/(1+2) * 1/(1+0.5)
        assert eval_bias(p, 4e9, 150.0) == pytest.approx(2.0 / 9.0, rel=1e-14)

    def test_range(self, rng):
        for _ in range(50):
            p = random_split_params(rng)
            b = eval_bias(p, rng.uniform(1e7, 1e11), rng.uniform(0, 1e3))
            assert 0 < b <= p.E_p

    def test_domain(self):
        with pytest.raises(DomainError):
            eval_bias(REFERENCE_PARAMS, 0.0, 1.0)
        with pytest.raises(DomainError):
            eval_bias(REFERENCE_PARAMS, 1e9, -1.0)


class TestSplitLaw:
    def test_irreducible_only(self):
        p = REFERENCE_PARAMS.replace(E_p=0.0, A=0.0, B=0.0, E_0=2.0)
        assert eval_split_law(p, 7.6e8, 40.0, 5.0) == 2.0

    def test_both_sigmoids_half(self):
        p = REFERENCE_PARAMS.replace(A=0.0, B=0.0, E_p=1.0, E_0=2.0)
        assert eval_split_law(p, p.N_s, 10.0, p.D_s) == pytest.approx(2.25)

    def test_against_straight_line_oracle(self, rng):
        p = random_split_params(rng)
        for N, D, Dk in [(1e8, 5.0, 0.0), (1.3e9, 40.0, 7.5), (2.7e9, 200.0, 30.0)]:
            assert eval_split_law(p, N, D, Dk) == pytest.approx(straight_line_split(p, N, D, Dk), rel=1e-12)

    def test_vectorized(self):
        N = np.array([1e8, 1e9])
        out = eval_split_law(REFERENCE_PARAMS, N, 10.0, 5.0)
        assert out.shape == (2,)
        assert out[0] == eval_split_law(REFERENCE_PARAMS, 1e8, 10.0, 5.0)

    def test_singular_at_zero_tokens(self):
        with pytest.raises(SingularityError):
            eval_split_law(REFERENCE_PARAMS, 1e9, 0.0, 0.0)

    @pytest.mark.parametrize("args", [(-1.0, 1.0, 1.0), (1e9, -1.0, 1.0), (1e9, 1.0, -1.0)])
    def test_domain_errors(self, args):
        with pytest.raises(DomainError):
            eval_split_law(REFERENCE_PARAMS, *args)

    @pytest.mark.parametrize("axis", [0, 1, 2])
    def test_strictly_decreasing(self, axis, rng):
        for _ in range(1000):
            p = random_split_params(rng)
            point = [float(np.exp(rng.uniform(np.log(1e7), np.log(1e11)))), rng.uniform(0.1, 1e3), rng.uniform(0.1, 1e3)]
            lo = list(point)
            hi = list(point)
            hi[axis] = point[axis] * rng.uniform(1.05, 10.0)
            assert eval_split_law(p, *lo) > eval_split_law(p, *hi)

    @settings(max_examples=200, deadline=None)
    @given(
        st.integers(0, 2**32 - 1),
        st.floats(1e7, 1e11),
        st.floats(0.0, 1e4),
        st.floats(0.0, 1e4),
    )
    def test_d_independence_at_saturated_domain_tokens(self, seed, N, D1, D2):
        p = random_split_params(np.random.default_rng(seed))
        assert abs(eval_split_law(p, N, D1 + 1e-3, BIG) - eval_split_law(p, N, D2 + 1e-3, BIG)) <= 1e-6


class TestDesiderata:
    """Asymptotic properties, with 1e250 tokens standing in for infinity.

    1e12 is not far enough: with exponents near 0.1 the tails are still ~0.1 nats there.
    """

    def test_distinct_irreducible_losses(self, rng):
        for _ in range(100):
            p = random_split_params(rng)
            N = float(np.exp(rng.uniform(np.log(1e7), np.log(1e11))))
            s1 = 1.0 / (1.0 + (N / p.N_s) ** p.gamma1)
            pretrain_floor = p.E_0 + p.E_p * s1 + p.B * N ** (-p.kappa)
            domain_floor = p.E_0 + p.B * N ** (-p.kappa)
            assert abs(eval_split_law(p, N, BIG, 0.0) - pretrain_floor) <= 1e-6
            assert abs(eval_split_law(p, N, 0.0, BIG) - domain_floor) <= 1e-6
            assert pretrain_floor > domain_floor

    def test_chinchilla_form_on_either_axis(self, rng):
        for _ in range(100):
            p = random_split_params(rng)
            N, t = float(rng.uniform(1e7, 1e11)), float(rng.uniform(0.01, 1e4))
            s1 = 1.0 / (1.0 + (N / p.N_s) ** p.gamma1)
            s2 = 1.0 / (1.0 + (t / p.D_s) ** p.gamma2)
            only_domain = p.E_0 + p.E_p * s1 * s2 + p.A * t ** (-p.alpha1) + p.B * N ** (-p.kappa)
            only_pretrain = p.E_0 + p.E_p * s1 + (p.A / p.c) * t ** (-p.alpha2) + p.B * N ** (-p.kappa)
            assert eval_split_law(p, N, 0.0, t) == pytest.approx(only_domain, abs=1e-6)
            assert eval_split_law(p, N, t, 0.0) == pytest.approx(only_pretrain, abs=1e-6)

    def test_same_floor_regardless_of_pretraining(self, rng):
        for _ in range(100):
            p = random_split_params(rng)
            N = float(rng.uniform(1e7, 1e11))
            D1, D2 = rng.uniform(0, 1e6, size=2)
            assert abs(eval_split_law(p, N, D1, BIG) - eval_split_law(p, N, D2, BIG)) <= 1e-6


def central_fd(fun, x, h):
    return (fun(x + h) - fun(x - h)) / (2.0 * h)


def fd_close(analytic, fd, rtol=1e-5, atol=1e-9):
    # atol absorbs central-difference roundoff on derivatives near 1e-9
    return abs(analytic - fd) <= rtol * max(abs(analytic), abs(fd)) + atol


class TestGradients:
    def test_linear_terms(self, rng):
        p = random_split_params(rng)
        g = grad_split_law(p, 1e9, 20.0, 5.0)
        assert g[1] == 1.0
        assert g[5] == pytest.approx(1e9 ** (-p.kappa), rel=1e-14)

    def test_parameter_gradient_vs_finite_differences(self, rng):
        for _ in range(50):
            p = random_split_params(rng)
            N, D, Dk = float(rng.uniform(1e8, 3e9)), float(rng.uniform(1, 300)), float(rng.uniform(0.5, 50))
            g = grad_split_law(p, N, D, Dk)
            v = p.to_vector()
            for j in range(len(v)):
                h = 1e-6 * max(1.0, abs(v[j]))

                def f(x, j=j):
                    w = v.copy()
                    w[j] = x
                    return eval_split_law(SplitLawParams.from_vector(w), N, D, Dk)

                assert fd_close(g[j], central_fd(f, v[j], h)), SplitLawParams.names()[j]

    def test_gradient_at_zero_domain_tokens_is_finite(self):
        g = grad_split_law(REFERENCE_PARAMS, 1e9, 20.0, 0.0)
        assert np.all(np.isfinite(g))
        assert g[7] == 0.0 and g[8] == 0.0  # gamma2, alpha1 do not act at D_k = 0

    def test_token_partials_zero_for_flat_law(self):
        p = REFERENCE_PARAMS.replace(A=0.0, E_p=0.0)
        assert partials_tokens(p, 1e9, 10.0, 3.0) == (0.0, 0.0)

    def test_token_partials_negative(self, rng):
        for _ in range(100):
            p = random_split_params(rng)
            dD, dDk = partials_tokens(p, float(rng.uniform(1e7, 1e11)), float(rng.uniform(0.1, 1e3)), float(rng.uniform(0.1, 1e3)))
            assert dD < 0 and dDk < 0

    def test_token_partials_vs_finite_differences(self, rng):
        for _ in range(50):
            p = random_split_params(rng)
            N, D, Dk = float(rng.uniform(1e8, 3e9)), float(rng.uniform(1, 300)), float(rng.uniform(0.5, 50))
            dD, dDk = partials_tokens(p, N, D, Dk)
            fd_D = central_fd(lambda x: eval_split_law(p, N, x, Dk), D, 1e-6 * max(1.0, D))
            fd_Dk = central_fd(lambda x: eval_split_law(p, N, D, x), Dk, 1e-6 * max(1.0, Dk))
            assert fd_close(dD, fd_D)
            assert fd_close(dDk, fd_Dk)

    @pytest.mark.parametrize("D, Dk", [(0.0, 1.0), (1.0, 0.0)])
    def test_token_partials_singular(self, D, Dk):
        with pytest.raises(SingularityError):
            partials_tokens(REFERENCE_PARAMS, 1e9, D, Dk)

    @pytest.mark.parametrize("family", [CHINCHILLA, LIEW])
    def test_other_family_jacobians(self, family, rng):
        for _ in range(10):
            theta = family.to_params(
                transform(rng.normal(size=family.n_params), family.transforms)
            ).to_vector()
            N, D, Dk = rng.uniform(1e8, 3e9), rng.uniform(1, 300), rng.uniform(0.5, 50)
            inputs = family.inputs(np.array([N]), np.array([D]), np.array([Dk]))
            J = family.jacobian(theta, *inputs)[0]
            for j in range(len(theta)):
                h = 1e-6 * max(1.0, abs(theta[j]))
                e = np.zeros_like(theta)
                e[j] = h
                fd = (family.predict(theta + e, *inputs)[0] - family.predict(theta - e, *inputs)[0]) / (2 * h)
                assert fd_close(J[j], fd)


class TestChinchilla:
    def test_constant(self):
        assert eval_chinchilla(ChinchillaParams(E=1.69, A=0.0, alpha=0.3, B=0.0, beta=0.3), 1e9, 10.0) == 1.69

    def test_size_term(self):
        assert eval_chinchilla(ChinchillaParams(E=0.0, A=1.0, alpha=0.5, B=0.0, beta=0.3), 4.0, 10.0) == 0.5

    def test_against_oracle(self, rng):
        for _ in range(10):
            p = ChinchillaParams(*rng.uniform([1, 100, 0.1, 10, 0.1], [3, 1000, 1.0, 100, 1.0]))
            N, D = rng.uniform(1e8, 1e10), rng.uniform(1, 1000)
            expected = p.E + p.A * math.pow(N, -p.alpha) + p.B * math.pow(D, -p.beta)
            assert eval_chinchilla(p, N, D) == pytest.approx(expected, rel=1e-12)

    def test_domain(self):
        with pytest.raises(DomainError):
            eval_chinchilla(ChinchillaParams(2, 1, 0.3, 1, 0.3), 1e9, 0.0)


class TestLiew:
    def test_constant(self):
        assert eval_liew(LiewParams(E=2.0, A=0.0, alpha1=0.3, alpha2=0.3, alpha3=0.1, B=0.0, beta=0.3), 1e9, 5.0, 5.0) == 2.0

    def test_product_term(self):
        p = LiewParams(E=0.0, A=1.0, alpha1=0.5, alpha2=0.5, alpha3=0.0, B=0.0, beta=0.3)
        assert eval_liew(p, 1e9, 4.0, 4.0) == pytest.approx(0.25)

    def test_against_oracle(self, rng):
        for _ in range(10):
            v = rng.uniform([1, 0.5, 0.1, 0.1, -0.3, 10, 0.1], [3, 5, 1, 1, 0.3, 500, 1])
            p = LiewParams(*v)
            N, D, Dp = rng.uniform(1e8, 1e10), rng.uniform(1, 1000), rng.uniform(0.1, 50)
            expected = p.E + p.A * math.pow(Dp, -p.alpha1) * math.pow(D, -p.alpha2 + p.alpha3 * math.log(Dp)) + p.B * math.pow(N, -p.beta)
            assert eval_liew(p, N, D, Dp) == pytest.approx(expected, rel=1e-12)

    @pytest.mark.parametrize("D, Dp", [(1.0, 0.0), (0.0, 1.0)])
    def test_domain(self, D, Dp):
        with pytest.raises(DomainError):
            eval_liew(LiewParams(2, 1, 0.3, 0.3, 0.0, 1, 0.3), 1e9, D, Dp)


class TestDocuments:
    def test_round_trip(self):
        doc = params_document(REFERENCE_PARAMS, seed=3, objective=0.5)
        assert doc["law"] == "split"
        assert [p["name"] for p in doc["parameters"]] == list(SplitLawParams.names())
        first = doc["parameters"][0]
        assert set(first) == {"name", "constrained_value", "raw_value", "transform"}
        assert set(first["transform"]) == {"kind", "lower", "upper"}
        assert doc["fit"] == {"seed": 3, "objective": 0.5}
        assert params_from_document(doc) == REFERENCE_PARAMS

    def test_raw_values_invert(self):
        doc = params_document(REFERENCE_PARAMS)
        raw = np.array([p["raw_value"] for p in doc["parameters"]])
        back = transform(raw, SPLIT.transforms)
        np.testing.assert_allclose(back, REFERENCE_PARAMS.to_vector(), rtol=1e-10)

    def test_boundary_values_have_null_raw(self):
        doc = params_document(REFERENCE_PARAMS.replace(A=0.0))
        assert doc["parameters"][4]["raw_value"] is None
