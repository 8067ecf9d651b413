"""Stream derivation and entry distributions."""

import numpy as np
import pytest

from angcal import rng as rngmod
from angcal.errors import ContractError


class TestSubstream:
    def test_same_inputs_same_stream(self):
        a = rngmod.substream(42, "design").standard_normal(8)
        b = rngmod.substream(42, "design").standard_normal(8)
        np.testing.assert_array_equal(a, b)

    def test_tags_separate_streams(self):
        a = rngmod.substream(42, "design").standard_normal(8)
        b = rngmod.substream(42, "labels").standard_normal(8)
        c = rngmod.substream(42, "design", 1).standard_normal(8)
        assert not np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_seed_changes_stream(self):
        a = rngmod.substream(1, "t").standard_normal(4)
        b = rngmod.substream(2, "t").standard_normal(4)
        assert not np.array_equal(a, b)

    def test_known_values_pinned(self):
        # regression guard for bit-reproducibility: Philox output for a
        # fixed derived key must never drift
        raw = rngmod.substream(7, "pin").bit_generator.random_raw(3)
        assert list(raw) == [
            16400606652244029633,
            848393498502201995,
            5692145296608867370,
        ]

    def test_seed_range_validated(self):
        with pytest.raises(ContractError):
            rngmod.substream(-1, "t")
        with pytest.raises(ContractError):
            rngmod.substream(2**64, "t")


class TestEntryDistributions:
    @pytest.mark.parametrize("dist", rngmod.ENTRY_DISTRIBUTIONS)
    def test_standardized_moments(self, dist):
        n = 10**6
        draws = rngmod.sample_entries(rngmod.substream(5, "moments", dist), n, dist)
        assert abs(draws.mean()) <= 4.0 / np.sqrt(n)
        assert abs(draws.var() - 1.0) <= 8.0 / np.sqrt(n)

    def test_rademacher_support(self):
        draws = rngmod.sample_entries(rngmod.substream(1, "r"), 1000, "rademacher")
        assert set(np.unique(draws)) == {-1.0, 1.0}

    def test_uniform_support(self):
        draws = rngmod.sample_entries(rngmod.substream(1, "u"), 10000, "uniform")
        half_width = np.sqrt(3.0)
        assert draws.min() >= -half_width and draws.max() <= half_width

    def test_unknown_distribution(self):
        with pytest.raises(ContractError):
            rngmod.sample_entries(rngmod.substream(1, "x"), 3, "cauchy")


def test_bernoulli_deterministic():
    probs = np.array([0.2, 0.5, 0.8, 1.0, 0.0])
    a = rngmod.bernoulli(rngmod.substream(3, "b"), probs)
    b = rngmod.bernoulli(rngmod.substream(3, "b"), probs)
    np.testing.assert_array_equal(a, b)
    assert a[3] == 1.0 and a[4] == 0.0
