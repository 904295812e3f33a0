import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from picolor import mixture as mx
from picolor.mixture import MixtureParams

N = 256
DELTA = 2.0 / (N - 1)


def random_params(rng, k=10, shape=(), scale_range=(-4.0, -1.0)):
    size = shape + (k,)
    return MixtureParams(
        rng.normal(size=size),
        rng.uniform(-0.9, 0.9, size),
        rng.uniform(-0.9, 0.9, size),
        rng.uniform(*scale_range, size),
        rng.uniform(*scale_range, size),
        rng.uniform(-0.5, 0.5, size),
    )


def single(mu_a, mu_b, log_s_a, log_s_b, coeff=0.0):
    return MixtureParams(*(np.array([v], dtype=float) for v in (0.0, mu_a, mu_b, log_s_a, log_s_b, coeff)))


def two_components(w0, mu0, mu1, log_s=-4.0):
    logits = np.log([w0, 1.0 - w0])
    return MixtureParams(logits, np.array([mu0[0], mu1[0]]), np.array([mu0[1], mu1[1]]),
                         np.full(2, log_s), np.full(2, log_s), np.zeros(2))


def center(bin_):
    return -1.0 + DELTA * bin_


# ------------------------------------------------------- extended-precision oracle

def mp_pmf(mu, log_s, bin_):
    """Discretized logistic mass of one bin as a plain difference of sigmoids.

    The working precision (400 digits) covers masses down to about 1e-350,
    so the cancellation in the subtraction is harmless.
    """
    s = mpmath.exp(mpmath.mpf(log_s))
    x = mpmath.mpf(-1) + mpmath.mpf(2) * bin_ / (N - 1)
    half = mpmath.mpf(1) / (N - 1)
    sig = lambda t: 1 / (1 + mpmath.exp(-t))  # noqa: E731
    upper = mpmath.mpf(1) if bin_ == N - 1 else sig((x + half - mu) / s)
    lower = mpmath.mpf(0) if bin_ == 0 else sig((x - half - mu) / s)
    return upper - lower


def mp_nll(params, a, b):
    logits = [mpmath.mpf(float(v)) for v in params.logits]
    z = mpmath.fsum(mpmath.exp(v) for v in logits)
    x_a = mpmath.mpf(-1) + mpmath.mpf(2) * a / (N - 1)
    total = mpmath.mpf(0)
    for k in range(params.k):
        mean_b = mpmath.mpf(float(params.mu_b[k])) + mpmath.mpf(float(params.coeff_ba[k])) * x_a
        pa = mp_pmf(mpmath.mpf(float(params.mu_a[k])), float(params.log_scale_a[k]), a)
        pb = mp_pmf(mean_b, float(params.log_scale_b[k]), b)
        total += mpmath.exp(logits[k]) / z * pa * pb
    return -mpmath.log(total)


@pytest.fixture(autouse=True, scope="module")
def _precision():
    with mpmath.workdps(400):
        yield


@pytest.mark.parametrize("seed", range(5))
def test_logpmf_matches_extended_precision(seed):
    rng = np.random.default_rng(seed)
    mu, log_s = rng.uniform(-1.2, 1.2), rng.uniform(-6.0, 0.0)
    bins = np.array([0, 1, 50, 127, 128, 200, 254, 255])
    got = mx.discretized_logistic_logpmf(mu, log_s, bins)
    want = np.array([float(mpmath.log(mp_pmf(mpmath.mpf(mu), log_s, int(b)))) for b in bins])
    assert np.max(np.abs(got - want) / np.maximum(np.abs(want), 1.0)) < 1e-10


@pytest.mark.parametrize("seed", range(5))
def test_equal_weight_mixture_nll_matches_extended_precision(seed):
    rng = np.random.default_rng(100 + seed)
    p = random_params(rng)
    p.logits[:] = 0.0
    for a, b in [(0, 255), (17, 200), (128, 127), (255, 0)]:
        got = float(mx.mixture_nll(p, a, b))
        assert got == pytest.approx(float(mp_nll(p, a, b)), rel=1e-10, abs=1e-10)


@pytest.mark.parametrize("seed", range(5))
def test_mixture_nll_matches_extended_precision_for_random_weights(seed):
    rng = np.random.default_rng(200 + seed)
    p = random_params(rng, scale_range=(-6.0, 0.0))
    a, b = (int(v) for v in rng.integers(0, N, 2))
    assert float(mx.mixture_nll(p, a, b)) == pytest.approx(float(mp_nll(p, a, b)), rel=1e-10)


# ------------------------------------------------------------ one-dimensional

@settings(max_examples=50, deadline=None)
@given(st.floats(-1.5, 1.5), st.floats(-8.0, 1.0))
def test_logpmf_normalizes_over_all_bins(mu, log_s):
    total = np.exp(mx.discretized_logistic_logpmf(mu, log_s, np.arange(N))).sum()
    assert abs(total - 1.0) < 1e-10


@pytest.mark.parametrize("log_s", [np.log(0.1), np.log(0.01), -7.0])
def test_edge_bin_captures_far_tail(log_s):
    assert np.exp(mx.discretized_logistic_logpmf(-5.0, log_s, 0)) > 0.999
    assert np.exp(mx.discretized_logistic_logpmf(5.0, log_s, 255)) > 0.999


@pytest.mark.parametrize("bin_", [0, 3, 128, 255])
def test_delta_limit_puts_all_mass_on_one_bin(bin_):
    lp = mx.discretized_logistic_logpmf(center(bin_), np.log(1e-6), bin_)
    assert lp == pytest.approx(0.0, abs=1e-12)


def test_tiny_probabilities_stay_finite():
    lp = mx.discretized_logistic_logpmf(-0.9, -7.0, np.arange(200, 255))
    assert np.all(np.isfinite(lp)) and np.all(lp < -100)


def test_bin_outside_alphabet_rejected():
    with pytest.raises(ValueError, match="bin index"):
        mx.discretized_logistic_logpmf(0.0, 0.0, 256)


# ---------------------------------------------------------------- joint PMF

def test_single_component_factorizes(rng):
    mu_a, mu_b, ls_a, ls_b = 0.2, -0.4, -2.5, -3.0
    p = single(mu_a, mu_b, ls_a, ls_b)
    for a, b in [(0, 0), (140, 60), (255, 3)]:
        want = -mx.discretized_logistic_logpmf(mu_a, ls_a, a) - mx.discretized_logistic_logpmf(mu_b, ls_b, b)
        assert float(mx.mixture_nll(p, a, b)) == pytest.approx(float(want), rel=1e-14)


def test_single_component_grid_is_outer_product():
    p = single(0.1, -0.3, -2.0, -3.0)
    pa = np.exp(mx.discretized_logistic_logpmf(0.1, -2.0, np.arange(N)))
    pb = np.exp(mx.discretized_logistic_logpmf(-0.3, -3.0, np.arange(N)))
    assert np.max(np.abs(mx.pmf_enumerate(p) - np.outer(pa, pb))) < 1e-15


@pytest.mark.parametrize("seed", range(3))
def test_full_alphabet_sums_to_one(seed):
    p = random_params(np.random.default_rng(seed), scale_range=(-5.0, 0.0))
    a, b = np.meshgrid(np.arange(N), np.arange(N), indexing="ij")
    rep = MixtureParams(*(np.broadcast_to(getattr(p, f), (N, N, p.k)) for f in mx.FIELDS))
    nll = mx.mixture_nll(rep, a, b)
    assert abs(np.exp(-nll).sum() - 1.0) < 1e-8
    assert np.max(np.abs(mx.pmf_enumerate(p) - np.exp(-nll))) < 1e-12


def test_grid_sums_to_one(rng):
    assert abs(mx.pmf_enumerate(random_params(rng)).sum() - 1.0) < 1e-8


def test_two_separated_components_give_two_local_maxima():
    # scales below one bin width: with wider scales the edge bins, which
    # absorb whole tails, become genuine local bumps of their own
    mu0, mu1 = (center(60), center(70)), (center(190), center(180))
    grid = mx.log_pmf_grid(two_components(0.5, mu0, mu1, log_s=-5.5))
    padded = np.pad(grid, 1, constant_values=-np.inf)
    maxima = []
    for a in range(N):
        for b in range(N):
            window = padded[a:a + 3, b:b + 3]
            if grid[a, b] == window.max() and (window == grid[a, b]).sum() == 1:
                maxima.append((a, b))
    assert maxima == [(60, 70), (190, 180)]


def test_coefficient_shifts_b_with_realized_a():
    p = single(0.0, 0.0, -5.0, -5.0, coeff=0.5)
    grid = mx.pmf_enumerate(p)
    for a in (40, 128, 220):
        want = int(np.rint((0.5 * center(a) + 1.0) / DELTA))
        assert int(np.argmax(grid[a])) == want


def test_log_scale_floor_is_applied():
    p = single(center(10), center(10), -50.0, -50.0)
    floored = single(center(10) + 0.3 * DELTA, center(10), -7.0, -7.0)
    assert float(mx.mixture_nll(single(center(10) + 0.3 * DELTA, center(10), -50.0, -50.0), 10, 10)) == \
        pytest.approx(float(mx.mixture_nll(floored, 10, 10)), rel=1e-14)
    assert np.isfinite(float(mx.mixture_nll(p, 200, 0)))


def test_channel_layout_round_trip(rng):
    arr = rng.normal(size=(2, 60, 3, 4))
    p = MixtureParams.from_channels(arr)
    assert p.k == 10 and p.batch_shape == (2, 3, 4)
    assert np.array_equal(p.to_channels(), arr)
    with pytest.raises(ValueError, match="multiple of 6"):
        MixtureParams.from_channels(rng.normal(size=(1, 61, 1, 1)))


def test_default_head_width_is_sixty():
    assert mx.n_outputs() == 60


# ---------------------------------------------------------------- sampling

def test_delta_limit_sampling_is_deterministic(rng):
    p = single(center(33), center(201), np.log(1e-6), np.log(1e-6))
    p = MixtureParams(*(np.broadcast_to(getattr(p, f), (500, 1)) for f in mx.FIELDS))
    a, b = mx.sample(p, rng, floor=-20.0)
    assert np.all(a == 33) and np.all(b == 201)


@pytest.mark.parametrize("seed", range(5))
def test_samples_match_enumeration_in_total_variation(seed):
    rng = np.random.default_rng(seed)
    p = random_params(rng, k=3, scale_range=(-6.0, -5.0))
    n = 200_000
    rep = MixtureParams(*(np.broadcast_to(getattr(p, f), (n, p.k)) for f in mx.FIELDS))
    a, b = mx.sample(rep, rng)
    hist = np.bincount(a * N + b, minlength=N * N) / n
    tv = 0.5 * np.abs(hist - mx.pmf_enumerate(p).ravel()).sum()
    assert tv < 0.01


def test_sampling_is_reproducible_for_a_seed(rng):
    p = random_params(rng, shape=(50,))
    a1, b1 = mx.sample(p, np.random.default_rng(7))
    a2, b2 = mx.sample(p, np.random.default_rng(7))
    assert a1.tobytes() == a2.tobytes() and b1.tobytes() == b2.tobytes()


def test_samples_stay_in_alphabet(rng):
    p = random_params(rng, shape=(2000,), scale_range=(-1.0, 1.0))
    a, b = mx.sample(p, rng)
    assert a.min() >= 0 and a.max() < N and b.min() >= 0 and b.max() < N


# ---------------------------------------------------------------------- MAP

@pytest.mark.parametrize("mode", ["exact", "fast"])
def test_tight_component_map_is_its_mean(mode):
    p = single(center(77), center(140), -6.0, -6.0)
    a, b = mx.map_estimate(p, mode)
    assert (int(a), int(b)) == (77, 140)


def test_exact_map_picks_heavier_component():
    mu0, mu1 = (center(200), center(30)), (center(40), center(220))
    a, b = mx.map_estimate(two_components(0.6, mu0, mu1))
    assert (int(a), int(b)) == (200, 30)
    a, b = mx.map_estimate(two_components(0.4, mu0, mu1))
    assert (int(a), int(b)) == (40, 220)


def test_exact_map_breaks_ties_lexicographically():
    # four equal bins: a and b each split evenly between two neighbouring centres
    p = single(center(100) + DELTA / 2, center(50) + DELTA / 2, -5.0, -5.0)
    a, b = mx.map_estimate(p)
    grid = mx.pmf_enumerate(p)
    assert grid[100, 50] == grid.max()
    assert (int(a), int(b)) == (100, 50)


def test_exact_map_never_worse_than_fast():
    rng = np.random.default_rng(11)
    p = random_params(rng, shape=(1000,), scale_range=(-5.0, 0.0))
    ea, eb = mx.map_estimate(p, "exact")
    fa, fb = mx.map_estimate(p, "fast")
    exact_nll = mx.mixture_nll(p, ea, eb)
    fast_nll = mx.mixture_nll(p, fa, fb)
    assert np.all(exact_nll <= fast_nll + 1e-12)


def test_map_keeps_batch_shape(rng):
    a, b = mx.map_estimate(random_params(rng, shape=(2, 3)), "fast")
    assert a.shape == b.shape == (2, 3)


def test_unknown_map_mode_rejected(rng):
    with pytest.raises(ValueError, match="exact"):
        mx.map_estimate(random_params(rng), "median")


# ------------------------------------------------------------- bits per dim

def test_uniform_model_scores_eight_bits():
    n_dims = 2 * 16 * 16
    assert mx.bits_per_dim(n_dims * 8 * np.log(2.0), n_dims) == pytest.approx(8.0, abs=1e-12)


def test_entropy_in_bits_matches_expected_nll(rng):
    p = random_params(rng, k=3)
    grid = mx.pmf_enumerate(p)
    entropy_bits = -np.sum(grid * np.log2(np.where(grid > 0, grid, 1.0)))
    a, b = np.meshgrid(np.arange(N), np.arange(N), indexing="ij")
    rep = MixtureParams(*(np.broadcast_to(getattr(p, f), (N, N, p.k)) for f in mx.FIELDS))
    expected_nats = np.sum(grid * mx.mixture_nll(rep, a, b))
    assert mx.bits_per_dim(expected_nats, 2) == pytest.approx(entropy_bits / 2, rel=1e-10)


def test_zero_dimensions_rejected():
    with pytest.raises(ValueError, match="positive"):
        mx.bits_per_dim(1.0, 0)
