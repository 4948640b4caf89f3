"""Property-based checks for the closed-form primitives."""

import numpy as np
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from counts.metrics import ccr_masked, spike_cf_target
from counts.model import GaussianHead
from counts.objective import gaussian_kl

finite_floats = st.floats(min_value=-20.0, max_value=20.0,
                          allow_nan=False, allow_infinity=False)
log_vars = st.floats(min_value=-6.0, max_value=6.0, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(mu_a=finite_floats, lv_a=log_vars, mu_b=finite_floats, lv_b=log_vars)
def test_kl_nonnegative(mu_a, lv_a, mu_b, lv_b):
    a = GaussianHead(torch.tensor([mu_a], dtype=torch.float64),
                     torch.tensor([lv_a], dtype=torch.float64))
    b = GaussianHead(torch.tensor([mu_b], dtype=torch.float64),
                     torch.tensor([lv_b], dtype=torch.float64))
    assert float(gaussian_kl(a, b)) >= -1e-9


@settings(max_examples=100, deadline=None)
@given(scale=st.floats(min_value=1e-3, max_value=1e3, allow_nan=False),
       seed=st.integers(min_value=0, max_value=2**16))
def test_ccr_scale_invariant(scale, seed):
    rng = np.random.default_rng(seed)
    mask = np.array([1.0] * 6 + [0.0] * 6)
    x = rng.normal(size=12)
    delta = rng.normal(size=12)
    if np.abs(delta[6:]).sum() < 1e-9:
        return
    base = ccr_masked(x, x + delta, mask)
    scaled = ccr_masked(x, x + scale * delta, mask)
    assert np.isclose(base, scaled, rtol=1e-9)


@settings(max_examples=100, deadline=None)
@given(switch=st.integers(min_value=0, max_value=79),
       shift_a=st.integers(min_value=0, max_value=15),
       shift_b=st.integers(min_value=0, max_value=15))
def test_shift_composition_on_binary_inputs(switch, shift_a, shift_b):
    y = (np.arange(80) >= switch).astype(float)
    once = spike_cf_target(y, shift=shift_a + shift_b)
    twice = spike_cf_target(spike_cf_target(y, shift=shift_a), shift=shift_b)
    assert np.array_equal(once, twice)
