import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bmnet import approx_math as am
from bmnet.convert import convert_weights
from bmnet.layers import BMDense
from bmnet.tensor import DomainError


class TestSplitFloat:
    def test_one(self):
        p = am.split_float(1.0)
        assert (p.sign, p.exponent, p.mantissa) == (0, 127, 0)

    def test_two(self):
        p = am.split_float(2.0)
        assert (p.exponent, p.mantissa) == (128, 0)

    def test_one_point_five(self):
        p = am.split_float(1.5)
        assert p.exponent == 127
        assert p.mantissa == 1 << 22  # b22 set, rest zero

    @pytest.mark.parametrize("bad", [0.0, -1.0, 1e-45, float("inf"), float("nan")])
    def test_domain_errors(self, bad):
        with pytest.raises(DomainError):
            am.split_float(bad)

    @settings(max_examples=200)
    @given(st.floats(min_value=1.2e-38, max_value=3e38, allow_nan=False, width=32))
    def test_assemble_round_trip(self, x):
        assert am.split_float(x).assemble() == np.float32(x)


class TestLog2Approx:
    def test_exact_at_one(self):
        assert am.log2_approx(1.0) == 0.0

    def test_exact_at_powers_of_two(self):
        for k in range(-10, 11):
            assert am.log2_approx(2.0**k) == float(k)

    def test_error_bound_on_mantissa_interval(self):
        # acceptance sweeps 1e6 points; this is the fast everyday version
        y = np.linspace(0.0, 1.0, 200_001)[:-1]
        x = (1.0 + y).astype(np.float32).astype(np.float64)
        err = np.abs(am.log2_approx(x) - np.log2(x))
        assert err.max() <= 7.05e-5

    def test_reference_anchored_in_high_precision(self):
        import mpmath

        mpmath.mp.dps = 40
        rng = np.random.default_rng(1)
        xs = 1.0 + rng.random(200)
        for x in xs:
            xf = float(np.float32(x))
            assert abs(float(mpmath.log(xf, 2)) - np.log2(xf)) < 1e-12

    def test_monotone_into_next_binade(self):
        ulp = float(np.spacing(np.float32(2.0), dtype=np.float32))
        xs = [2.0 - 8 * ulp, 2.0 - 4 * ulp, 2.0 - 2 * ulp, 2.0 - ulp, 2.0]
        vals = [am.log2_approx(x) for x in xs]
        assert all(a <= b for a, b in zip(vals, vals[1:]))
        assert abs(vals[-2] - 1.0) <= 7.05e-5
        assert vals[-1] == 1.0

    def test_counted_ops_exactly_five_mul_six_add(self):
        rng = np.random.default_rng(0)
        for x in 1.0 + rng.random(20) * 100:
            val, counts = am.log2_approx_counted(float(x))
            assert counts == {"mul": 5, "add": 6}
            assert val == am.log2_approx(float(np.float32(x)))

    def test_rejects_nonpositive(self):
        with pytest.raises(DomainError):
            am.log2_approx(np.array([1.0, 0.0]))
        with pytest.raises(DomainError):
            am.log2_approx(-3.0)


class TestCoefficients:
    def test_log2_coefficients_rederive_to_six_digits(self):
        derived = am.derive_log2_coefficients()
        assert derived[0] == pytest.approx(0.0, abs=1e-12)
        for d, c in zip(derived[1:], am.LOG2_COEFFS[1:]):
            assert abs(d - c) <= abs(c) * 5e-7  # 6 significant digits

    def test_exp2_coefficients_rederive(self):
        derived = am.derive_exp2_coefficients()
        assert derived[0] == 1.0
        np.testing.assert_allclose(derived, am.EXP2_COEFFS, rtol=1e-12)


class TestExp2Approx:
    def test_exact_at_zero(self):
        assert am.exp2_approx(0.0) == 1.0

    def test_exact_at_integers(self):
        for k in range(-30, 31):
            assert am.exp2_approx(float(k)) == 2.0**k

    def test_relative_error(self):
        x = np.linspace(-20, 20, 100_001)
        rel = np.abs(am.exp2_approx(x) - 2.0**x) / 2.0**x
        assert rel.max() <= 1e-4

    def test_saturation_flagged(self):
        with pytest.warns(RuntimeWarning):
            v = am.exp2_approx(300.0)
        assert v == float(np.finfo(np.float32).max)
        with pytest.warns(RuntimeWarning):
            assert am.exp2_approx(-300.0) == 0.0


class TestNaturalWrappers:
    def test_ln_one(self):
        assert am.ln_approx(1.0) == 0.0

    def test_exp_zero(self):
        assert am.exp_approx(0.0) == 1.0

    def test_round_trip(self):
        x = np.exp(np.linspace(np.log(1e-3), np.log(1e3), 20_001))
        rel = np.abs(am.exp_approx(am.ln_approx(x)) / x - 1.0)
        assert rel.max() <= 3e-4


class TestErrorBudgetInBMLayer:
    def test_approx_vs_exact_preactivation(self):
        # positive weights and inputs: single surviving term, no cancellation
        rng = np.random.default_rng(5)
        w = rng.uniform(0.1, 2.0, size=(12, 6))
        layer = BMDense(convert_weights(w, np.zeros(6)))
        x = rng.uniform(0.05, 3.0, size=(40, 12))
        exact = layer.forward(x)
        layer.approx = True
        approx = layer.forward(x)
        rel = np.abs(approx - exact) / np.abs(exact)
        assert rel.max() <= 1e-3

    def test_mixed_signs_relative_to_term_scale(self):
        rng = np.random.default_rng(6)
        w = rng.normal(size=(10, 5))
        layer = BMDense(convert_weights(w, rng.normal(size=5)))
        x = rng.normal(size=(30, 10))
        exact = layer.forward(x, train=True)
        scale = np.abs(layer.last_terms).max(axis=1)  # [n, Q] term magnitudes
        layer.approx = True
        approx = layer.forward(x)
        assert (np.abs(approx - exact) <= 1e-3 * np.maximum(scale, 1e-9)).all()
