"""Generator contracts: toy, autoregressive step, spike, determinism."""

import math

import numpy as np
import pytest

from counts.errors import ConfigError
from counts.synthgen import (
    SpikeConfig,
    ToyConfig,
    PairConfig,
    gen_pairs,
    gen_spike,
    gen_toy,
    narma_step,
)


class TestGenToy:
    def test_degenerate_config_gives_constant_instances(self):
        # sigma_x = sigma_u = 0, mu_x = mu_u = 1:
        # z = 1 * (m * 1) = [1]*6 + [0]*6, logit = 6 + 1 = 7.
        cfg = ToyConfig(n=200, seed=3, mu_x=1.0, sigma_x=0.0, mu_u=1.0, sigma_u=0.0)
        ds = gen_toy(cfg)
        p = 1.0 / (1.0 + math.exp(-7.0))
        assert abs(p - 0.99909) < 5e-6
        for inst in ds.instances:
            assert np.array_equal(inst.x, np.ones(12))
            assert np.array_equal(inst.z, np.array([1.0] * 6 + [0.0] * 6))
        freq = np.mean([inst.y for inst in ds.instances])
        assert freq > 0.97

    def test_zero_exogenous_kills_the_logit(self):
        cfg = ToyConfig(n=4000, seed=9, mu_u=0.0, sigma_u=0.0)
        ds = gen_toy(cfg)
        for inst in ds.instances[:50]:
            assert np.array_equal(inst.z, np.zeros(12))
        # label probability exactly 0.5
        freq = np.mean([inst.y for inst in ds.instances])
        assert abs(freq - 0.5) < 3 * math.sqrt(0.25 / cfg.n)

    def test_same_seed_bit_identical(self):
        a = gen_toy(ToyConfig(n=50, seed=123))
        b = gen_toy(ToyConfig(n=50, seed=123))
        assert a == b

    def test_different_seed_differs(self):
        a = gen_toy(ToyConfig(n=50, seed=123))
        b = gen_toy(ToyConfig(n=50, seed=124))
        assert a != b

    def test_z_consistency_exact(self):
        ds = gen_toy(ToyConfig(n=100, seed=5))
        for inst in ds.instances:
            assert np.all(inst.z - inst.u * (inst.m * inst.x) == 0.0)

    def test_label_frequency_matches_sigmoid(self):
        # fixed (x, u) via zero stddevs; label frequency over 1e5 instances
        # within 3 binomial standard errors of sigmoid(sum z + u)
        cfg = ToyConfig(n=100_000, seed=77, mu_x=0.25, sigma_x=0.0, mu_u=0.5, sigma_u=0.0)
        ds = gen_toy(cfg)
        logit = 0.5 * (6 * 0.25) + 0.5
        p = 1.0 / (1.0 + math.exp(-logit))
        freq = np.mean([inst.y for inst in ds.instances])
        assert abs(freq - p) <= 3 * math.sqrt(p * (1 - p) / cfg.n)

    @pytest.mark.parametrize("bad", [
        dict(n=0), dict(n=10, sigma_x=-1.0), dict(n=10, sigma_u=-0.5),
    ])
    def test_invalid_config(self, bad):
        with pytest.raises(ConfigError):
            gen_toy(ToyConfig(**bad))


class TestNarmaStep:
    def test_hand_evaluated_step(self):
        # 0.5*0.1 + 0.5*0.1*(0.1+0.1) + 0 + 0.5 + 0.003*2 = 0.566
        assert narma_step(0.1, 0.1, 0.0, 0.0, 0.003, 2) == pytest.approx(0.566, abs=1e-12)

    def test_zero_state_leaves_drift_and_offset(self):
        for t in (2, 5, 17):
            assert narma_step(0.0, 0.7, 0.0, 0.0, 0.01, t) == pytest.approx(0.5 + 0.01 * t)

    def test_all_zero_gives_half(self):
        assert narma_step(0.0, 0.0, 0.0, 0.0, 0.0, 9) == 0.5

    def test_noise_term(self):
        base = narma_step(0.2, 0.1, 0.0, 0.0, 0.0, 2)
        assert narma_step(0.2, 0.1, 2.0, 3.0, 0.0, 2) == pytest.approx(base + 1.5 * 3.0 * 2.0)


class TestGenSpike:
    def test_channel_without_spikes_is_raw_series(self):
        ds = gen_spike(SpikeConfig(n=40, seed=2))
        found = False
        for inst in ds.instances:
            for d in range(3):
                if inst.n_mask[d] == 0:
                    assert len(inst.spike_times[d]) == 0
                    found = True
        assert found

    def test_label_all_zero_without_active_spikes(self):
        ds = gen_spike(SpikeConfig(n=200, seed=4))
        checked = 0
        for inst in ds.instances:
            has_active_spike = any(
                inst.m_mask[d] and len(inst.spike_times[d]) > 0 for d in range(3)
            )
            if not has_active_spike:
                assert np.all(inst.y == 0)
                checked += 1
        assert checked > 0

    def test_label_switch_position(self):
        # earliest spike among m-active channels at t0 -> y zero through t0, one after
        ds = gen_spike(SpikeConfig(n=200, seed=8))
        checked = 0
        for inst in ds.instances:
            firsts = [
                int(g.min()) for g, m in zip(inst.spike_times, inst.m_mask) if m and len(g)
            ]
            if not firsts:
                continue
            t0 = min(firsts)
            assert np.all(inst.y[: t0 + 1] == 0)
            assert np.all(inst.y[t0 + 1:] == 1)
            checked += 1
        assert checked > 10

    def test_label_monotone_nondecreasing(self):
        ds = gen_spike(SpikeConfig(n=100, seed=6))
        for inst in ds.instances:
            assert np.all(np.diff(inst.y) >= 0)

    def test_third_channel_never_active(self):
        ds = gen_spike(SpikeConfig(n=300, seed=10))
        for inst in ds.instances:
            assert inst.n_mask[2] == 0
            assert inst.m_mask[2] == 0
            assert len(inst.spike_times[2]) == 0

    def test_series_finite_and_bounded(self):
        ds = gen_spike(SpikeConfig(n=20, seed=3))
        for inst in ds.instances:
            assert np.all(np.isfinite(inst.x))

    def test_determinism(self):
        a = gen_spike(SpikeConfig(n=30, seed=55))
        b = gen_spike(SpikeConfig(n=30, seed=55))
        assert a == b

    def test_literal_lag_reading_is_available_and_differs(self):
        a = gen_spike(SpikeConfig(n=5, seed=1))
        b = gen_spike(SpikeConfig(n=5, seed=1, literal_lag_sum=True))
        assert not np.array_equal(a.instances[0].x, b.instances[0].x)

    @pytest.mark.parametrize("bad", [
        dict(n=0), dict(n=5, T=2), dict(n=5, theta=(0.5, 1.2, 0.0)),
        dict(n=5, noise_sigma=-1.0), dict(n=5, spike_rate=-2.0),
    ])
    def test_invalid_config(self, bad):
        with pytest.raises(ConfigError):
            gen_spike(SpikeConfig(**bad))


class TestGenPairs:
    def test_segments_share_exogenous(self):
        ds = gen_pairs(PairConfig(n=20, seed=7))
        for inst in ds.instances:
            assert inst.x1.shape == (12,) and inst.x2.shape == (12,)
            assert inst.y == 2 * inst.y1 + inst.y2
            assert inst.x.shape == (24,)

    def test_determinism(self):
        assert gen_pairs(PairConfig(n=10, seed=3)) == gen_pairs(PairConfig(n=10, seed=3))

    def test_invalid_config(self):
        with pytest.raises(ConfigError):
            gen_pairs(PairConfig(n=0))
