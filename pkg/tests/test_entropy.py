"""Tests for the aggregation conditional entropies."""

import math

import numpy as np
import pytest

from iseasim.entropy import (
    EntropyReport,
    cond_entropy_ml,
    cond_entropy_mmse,
    entropy_report,
)
from iseasim.validation import ValidationError


class TestCondEntropyMl:
    def test_single_device_unit_case(self):
        # independent arithmetic: 0.5 * ln(2 pi e * [1/1 + 1/1]^-1)
        expected = 0.5 * math.log(2 * math.pi * math.e * 0.5)
        assert cond_entropy_ml(1.0, [1.0]) == pytest.approx(expected, abs=1e-12)
        assert expected == pytest.approx(1.0724, abs=1e-4)

    def test_equal_variances_reach_tight_form(self):
        sv = [0.7, 0.7, 0.7]
        tight = 0.5 * math.log(
            2 * math.pi * math.e / (1.0 / 2.0 + sum(1.0 / v for v in sv)))
        assert cond_entropy_ml(2.0, sv) == pytest.approx(tight, abs=1e-12)

    def test_common_scaling_shifts_by_half_log(self):
        sv = np.array([0.3, 1.2, 2.5])
        c = 3.7
        shift = cond_entropy_ml(c * 1.4, c * sv) - cond_entropy_ml(1.4, sv)
        assert shift == pytest.approx(0.5 * math.log(c), abs=1e-12)


class TestCondEntropyMmse:
    def test_equal_variances_match_ml(self):
        sv = [1.3, 1.3, 1.3, 1.3]
        assert cond_entropy_mmse(0.8, sv) == pytest.approx(
            cond_entropy_ml(0.8, sv), abs=1e-12)

    def test_non_informative_prior_matches_ml(self):
        sv = [0.4, 1.0, 2.7]
        assert cond_entropy_mmse(1e12, sv) == pytest.approx(
            cond_entropy_ml(1e12, sv), abs=1e-4)

    def test_heterogeneous_strictly_below_ml(self):
        # direct evaluation of both closed forms
        sv = np.array([0.1, 1.0, 10.0])
        prior_var = 1.0
        rho = prior_var / (prior_var + sv)
        h_ml = 0.5 * math.log(
            2 * math.pi * math.e / (1.0 + 9.0 / sv.sum()))
        h_mmse = 0.5 * math.log(
            2 * math.pi * math.e / (1.0 + rho.sum() ** 2 / np.sum(rho ** 2 * sv)))
        assert cond_entropy_ml(prior_var, sv) == pytest.approx(h_ml, abs=1e-12)
        assert cond_entropy_mmse(prior_var, sv) == pytest.approx(h_mmse, abs=1e-12)
        assert h_mmse < h_ml


class TestOrderingProperty:
    def test_mmse_never_exceeds_ml(self):
        rng = np.random.default_rng(21)
        for _ in range(1000):
            K = int(rng.integers(1, 8))
            sv = rng.uniform(0.05, 20.0, K)
            prior_var = float(rng.uniform(0.1, 10.0))
            assert cond_entropy_mmse(prior_var, sv) \
                <= cond_entropy_ml(prior_var, sv) + 1e-12

    def test_equality_iff_equal_variances(self):
        rng = np.random.default_rng(22)
        for _ in range(100):
            v = float(rng.uniform(0.1, 5.0))
            sv = np.full(int(rng.integers(1, 6)), v)
            assert cond_entropy_mmse(1.0, sv) == pytest.approx(
                cond_entropy_ml(1.0, sv), abs=1e-12)
        gap = cond_entropy_ml(1.0, [0.5, 2.0]) - cond_entropy_mmse(1.0, [0.5, 2.0])
        assert gap > 1e-6

    def test_monotone_in_each_sensing_var(self):
        rng = np.random.default_rng(23)
        for fn in (cond_entropy_ml, cond_entropy_mmse):
            sv = rng.uniform(0.2, 2.0, 4)
            base = fn(1.0, sv)
            for k in range(4):
                bumped = sv.copy()
                bumped[k] *= 1.5
                assert fn(1.0, bumped) >= base - 1e-12


class TestEntropyReport:
    def test_fields_and_invariants(self):
        rep = entropy_report(1.0, [0.1, 1.0, 10.0])
        assert rep.h_mmse <= rep.h_ml + 1e-12
        np.testing.assert_allclose(rep.shrinkage,
                                   [1 / 1.1, 0.5, 1 / 11.0])

    def test_invalid_inputs_rejected(self):
        with pytest.raises(ValidationError):
            cond_entropy_ml(0.0, [1.0])
        with pytest.raises(ValidationError):
            cond_entropy_mmse(1.0, [])
        with pytest.raises(ValidationError):
            cond_entropy_mmse(1.0, [1.0, -0.5])
        with pytest.raises(ValidationError):
            EntropyReport(h_ml=0.0, h_mmse=1.0, shrinkage=[0.5])
