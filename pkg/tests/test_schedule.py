import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctxpaint.errors import ContractError
from ctxpaint.schedule import (
    BETA_MAX,
    BETA_MIN,
    SNR_CAP,
    cosine_schedule,
    dump_csv,
    from_descriptor,
    laplace_log_snr,
    laplace_schedule,
    make_schedule,
    match_timesteps,
    snr,
)

from _oracles import cosine_abar


def test_cosine_length_and_normalization():
    s = cosine_schedule(1000)
    assert s.T == 1000 and len(s.betas) == len(s.alpha_bars) == len(s.posterior_vars) == 1000
    assert s.alpha_bar(0) == 1.0


def test_cosine_alpha_bar_matches_closed_form():
    s = cosine_schedule(10)
    assert abs(s.alpha_bar(5) - cosine_abar(5, 10)) < 1e-12


def test_cosine_rejects_short():
    with pytest.raises(ContractError):
        cosine_schedule(1)


def test_laplace_median_and_midpoint():
    assert laplace_log_snr(0.5, mu=0.3, b=0.7) == pytest.approx(0.3)
    assert laplace_schedule(100).alpha_bar(50) == pytest.approx(0.5, abs=1e-12)


def test_laplace_rejects_bad_scale():
    with pytest.raises(ContractError):
        laplace_schedule(100, b=0.0)
    with pytest.raises(ContractError):
        laplace_schedule(1)


def test_laplace_timestep_density_peaks_at_median():
    # timesteps per unit log-SNR, histogrammed on a symmetric grid around mu
    lam = laplace_schedule(1000).log_snr()
    counts, edges = np.histogram(lam, bins=np.arange(-4.0, 4.01, 0.5))
    centres = 0.5 * (edges[1:] + edges[:-1])
    assert abs(centres[np.argmax(counts)]) <= 0.25


def test_snr_examples_and_cap():
    s = laplace_schedule(100)
    assert snr(s, 50) == pytest.approx(1.0, abs=1e-12)
    tiny = from_descriptor({"kind": "cosine", "T": 100000})
    assert snr(tiny, 1) <= SNR_CAP
    with pytest.raises(ContractError):
        snr(s, 0)
    with pytest.raises(ContractError):
        snr(s, 101)


@pytest.mark.parametrize("kind", ["cosine", "laplace"])
def test_snr_strictly_decreasing(kind):
    s = make_schedule(kind, 1000)
    values = [snr(s, t) for t in range(1, 1001)]
    assert all(a > b for a, b in zip(values, values[1:]))


@pytest.mark.parametrize("T", [250, 500, 1000])
def test_cosine_clamp_inactive_before_last_step(T):
    s = cosine_schedule(T)
    raw = 1.0 - np.array([cosine_abar(t, T) / cosine_abar(t - 1, T) for t in range(1, T)])
    np.testing.assert_allclose(s.betas[:-1], raw, rtol=1e-9)
    assert np.all((s.betas[:-1] > BETA_MIN) & (s.betas[:-1] < BETA_MAX))


@pytest.mark.parametrize("T", [250, 500, 1000])
def test_cosine_endpoints(T):
    s = cosine_schedule(T)
    assert s.alpha_bar(1) >= 0.99
    assert s.alpha_bar(T) <= 1e-3


def test_laplace_terminal_noise_level():
    assert laplace_schedule(1000).alpha_bar(1000) <= 1e-3


def test_posterior_variance_formula_and_terminal_zero():
    s = cosine_schedule(50)
    assert s.posterior_var(1) == 0.0
    for t in (2, 17, 50):
        ab, prev = s.alpha_bar(t), s.alpha_bar(t - 1)
        assert s.posterior_var(t) == pytest.approx((1 - prev) / (1 - ab) * s.beta(t), rel=1e-12)


def test_schedule_is_read_only():
    s = cosine_schedule(10)
    with pytest.raises(ValueError):
        s.betas[0] = 0.5


def test_match_timesteps():
    trained = cosine_schedule(1000)
    assert np.array_equal(match_timesteps(trained, trained), np.arange(1001))
    steps = match_timesteps(cosine_schedule(100), trained)
    # the cosine curve depends on t / T only, so step t lands on 10 t
    assert np.array_equal(steps[1:], 10 * np.arange(1, 101))
    lap = match_timesteps(laplace_schedule(100), trained)
    assert np.all(np.diff(lap[1:]) >= 0) and lap[1] >= 1 and lap[-1] <= 1000


def test_dump_csv_header_and_rows():
    text = dump_csv(laplace_schedule(20))
    lines = text.strip().split("\n")
    assert lines[0] == "t,beta,alpha_bar,snr,posterior_var"
    assert len(lines) == 21
    t, beta, ab, r, pv = map(float, lines[10].split(","))
    assert t == 10 and ab == pytest.approx(0.5, rel=1e-9) and r == pytest.approx(1.0, rel=1e-9)


@settings(max_examples=40, deadline=None)
@given(
    kind=st.sampled_from(["cosine", "laplace"]),
    T=st.integers(2, 1500),
    mu=st.floats(-2, 2),
    b=st.floats(0.1, 2.0),
)
def test_schedule_invariants(kind, T, mu, b):
    s = make_schedule(kind, T) if kind == "cosine" else laplace_schedule(T, mu, b)
    assert np.all((s.betas > 0) & (s.betas < 1))
    assert np.all(np.diff(s.alpha_bars) < 0)
    np.testing.assert_allclose(np.cumprod(1.0 - s.betas), s.alpha_bars, rtol=1e-5)
    assert np.all(s.posterior_vars >= 0) and s.posterior_vars[0] == 0.0


def test_laplace_band_density_exceeds_cosine():
    def in_band(s):
        lam = s.log_snr()
        return int(np.sum((lam >= -1) & (lam <= 1)))

    lap, cos = in_band(laplace_schedule(1000)), in_band(cosine_schedule(1000))
    assert lap >= 2 * cos
    # band [-1, 1] for Laplace(0, 0.5): u in [0.5 e^-2 .. 1 - 0.5 e^-2]
    expected = 1000 * (1 - math.exp(-2))
    assert abs(lap - expected) <= 2
