import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from modules.contrast import build_pyramid, mask_pyramid
from modules.csf import AnalyticCsf
from modules.errors import ConfigurationError, HvpfWarning, InputError
from modules.scheduler import (
    ProfileSet,
    VariantProfile,
    analyze_patch,
    band_frequencies,
    cost_report,
    default_patch_size,
    heatmap_levels,
    overhead_flops,
    schedule_image,
    schedule_sequence,
    select_variant,
    tolerable_attenuation,
    tolerable_contrast,
)
from modules.viewing import ViewingConditions
from tests.conftest import decode, make_natural
from utils.data_loader import load_default_profiles

LADDER = load_default_profiles(k=4)
VIEWING = ViewingConditions()
CSF = AnalyticCsf()


def checkerboard(shape=(360, 640), period=4):
    ys, xs = np.mgrid[0:shape[0], 0:shape[1]]
    half = period // 2
    return np.where(((xs // half) + (ys // half)) % 2 == 0, 255.0, 0.0)


# ---------------------------------------------------------------------------
# Bands and profiles
# ---------------------------------------------------------------------------

def test_band_frequencies_ascending():
    assert band_frequencies() == pytest.approx([0.0625, 0.125, 0.25])
    assert band_frequencies(k=4) == pytest.approx([0.015625, 0.03125, 0.0625])


def test_bundled_ladder(ladder):
    assert [v.id for v in ladder] == [0, 1, 2, 3, 4]
    assert ladder.baseline.id == 4
    assert ladder.cheapest.id == 0
    np.testing.assert_allclose(ladder.by_id(0).t_hat, [0.90, 0.45, 0.10])
    np.testing.assert_allclose(ladder.by_id(4).t_hat, [0.99, 0.93, 0.80])


def test_t_hat_from_falloff_params():
    variant = VariantProfile.from_dict(
        {'id': 0, 'name': 'g', 'cost_flops': 1.0, 'atten': {'a': 0.4987, 'b': 0.0, 'c': 0.1}},
        bands=[0.0, 0.0, 0.0],
    )
    np.testing.assert_allclose(variant.t_hat, 0.9, atol=1e-4)


def test_t_hat_clamped():
    variant = VariantProfile(id=0, name='x', cost_flops=1.0, t_hat=[2.0, -0.5, 0.3])
    np.testing.assert_allclose(variant.t_hat, [1.5, 0.0, 0.3])


def _variant(i, cost, flagged=False):
    return VariantProfile(id=i, name=f"v{i}", cost_flops=cost, t_hat=[0.5, 0.5, 0.5], baseline_full=flagged)


@pytest.mark.parametrize("variants", [
    [],
    [_variant(0, 1.0)],
    [_variant(0, 1.0), _variant(0, 2.0)],
    [_variant(0, 1.0), _variant(1, 1.0)],
    [_variant(0, 1.0, flagged=True), _variant(1, 2.0)],
    [_variant(0, 1.0, flagged=True), _variant(1, 2.0, flagged=True)],
])
def test_invalid_profile_sets(variants):
    with pytest.raises(ConfigurationError):
        ProfileSet(variants)


def test_invalid_variant_values():
    with pytest.raises(ConfigurationError):
        VariantProfile(id=0, name='x', cost_flops=0.0, t_hat=[0.5, 0.5, 0.5])
    with pytest.raises(ConfigurationError):
        VariantProfile(id=0, name='x', cost_flops=1.0, t_hat=[0.5, 0.5])


def test_unflagged_baseline_is_most_expensive():
    assert ProfileSet([_variant(3, 5.0), _variant(1, 2.0)]).baseline.id == 3


# ---------------------------------------------------------------------------
# Tolerable attenuation
# ---------------------------------------------------------------------------

def test_tolerable_contrast_examples():
    assert tolerable_contrast(0.0, 0.0) == 0.0
    assert tolerable_contrast(0.5 ** (1 / 0.7), 0.0) == 0.0
    assert tolerable_contrast(3.0, 0.0) == pytest.approx(1.2327, abs=1e-3)
    assert tolerable_contrast(3.0, 0.0) / 3.0 == pytest.approx(0.4109, abs=1e-3)


@settings(max_examples=80, deadline=None)
@given(st.floats(0.0, 1e4), st.floats(0.0, 50.0))
def test_tolerable_contrast_below_input(c, m):
    assert 0.0 <= tolerable_contrast(c, m) <= c


@settings(max_examples=1000, deadline=None)
@given(st.floats(0.0, 50.0), st.floats(1.0, 1e3), st.floats(1.0, 10.0))
def test_tolerable_ratio_grows_with_contrast(m, lift, factor):
    # Above threshold C'/C = (1 - (1 + M) C^-alpha)^(1/alpha), rising towards 1
    low = ((1.0 + m) * lift) ** (1 / 0.7)
    high = low * factor
    assert tolerable_contrast(low, m) / low <= tolerable_contrast(high, m) / high + 1e-12


@settings(max_examples=200, deadline=None)
@given(st.floats(0.0, 50.0), st.floats(0.0, 0.999))
def test_below_threshold_is_fully_tolerant(m, fraction):
    c = ((1.0 + m) * fraction) ** (1 / 0.7)
    assert tolerable_contrast(c, m) == 0.0


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(0.0, 255.0), st.floats(0.0, 40.0), st.floats(0.0, 30.0))
def test_patch_t_in_unit_interval(seed, amplitude, eccentricity, velocity):
    rng = np.random.default_rng(seed)
    codes = np.clip(128.0 + amplitude * rng.uniform(-1.0, 1.0, (16, 16)), 0, 255)
    t = analyze_patch(decode(codes, VIEWING), VIEWING, CSF, velocity=velocity, eccentricity=eccentricity)
    assert t.shape == (3,)
    assert np.all((t >= 0.0) & (t <= 1.0))


def test_t_in_unit_interval_on_many_patches(viewing, csf, ladder):
    rng = np.random.default_rng(20)
    amplitude = np.kron(rng.random((100, 100)) * 128.0, np.ones((8, 8)))
    codes = np.clip(128.0 + amplitude * rng.uniform(-1.0, 1.0, (800, 800)), 0, 255)
    qmap = schedule_image(decode(codes, viewing), viewing, csf, ladder, 8, gaze=(400, 400))
    assert qmap.n_patches == 10_000
    assert np.all((qmap.t_vectors >= 0.0) & (qmap.t_vectors <= 1.0))


def test_tolerable_attenuation_single_position(viewing):
    pyramid = build_pyramid(np.ones((16, 16)), viewing)
    for band in pyramid.bands:
        band.normalized = np.zeros_like(band.physical)
    pyramid.bands[2].normalized[0, 0] = 3.0
    t = tolerable_attenuation(mask_pyramid(pyramid))
    np.testing.assert_allclose(t, [0.4109, 0.0, 0.0], atol=1e-3)


def test_tolerable_attenuation_needs_masking(viewing):
    with pytest.raises(InputError):
        tolerable_attenuation(build_pyramid(np.ones((16, 16)), viewing))


# ---------------------------------------------------------------------------
# Selection
# ---------------------------------------------------------------------------

def test_select_most_similar(two_variants):
    assert select_variant([0.9, 0.9, 0.8], two_variants) == 1
    assert select_variant([0.95, 0.45, 0.10], two_variants) == 0


def test_zero_t_selects_cheapest(ladder):
    assert select_variant([0.0, 0.0, 0.0], ladder) == 0


def test_ties_go_to_cheaper():
    profiles = ProfileSet([
        VariantProfile(id=7, name='big', cost_flops=2.0, t_hat=[1.0, 1.0, 1.0]),
        VariantProfile(id=3, name='small', cost_flops=1.0, t_hat=[0.5, 0.5, 0.5]),
    ])
    assert select_variant([0.2, 0.2, 0.2], profiles) == 3


@settings(max_examples=1000, deadline=None)
@given(st.lists(st.floats(0.01, 1.0), min_size=3, max_size=3), st.floats(1e-3, 1e3))
def test_selection_scale_invariant(t, scale):
    assert select_variant(t, LADDER) == select_variant([scale * x for x in t], LADDER)


# ---------------------------------------------------------------------------
# Patch size and overhead
# ---------------------------------------------------------------------------

def test_default_patch_size():
    assert default_patch_size(4, receptive_field=40) == 10
    assert default_patch_size(4, lowres_patch=48) == 48
    with pytest.warns(HvpfWarning):
        assert default_patch_size(4, receptive_field=41) == 11
    with pytest.raises(ConfigurationError):
        default_patch_size(4, receptive_field=40, lowres_patch=48)
    with pytest.raises(ConfigurationError):
        default_patch_size(3, lowres_patch=48)


def test_overhead_anchors():
    assert overhead_flops(10) == pytest.approx(39_000)
    assert overhead_flops(35) == pytest.approx(477_000)
    assert overhead_flops(20) > overhead_flops(10)


# ---------------------------------------------------------------------------
# Image scheduling
# ---------------------------------------------------------------------------

def test_flat_image_selects_cheapest(viewing, csf, ladder):
    qmap = schedule_image(np.full((64, 64), 88.0), viewing, csf, ladder, 16)
    assert qmap.grid.shape == (4, 4)
    assert np.all(qmap.grid == 0)
    assert qmap.ratio == 2e6 / 4.8e8


def test_fine_checkerboard_needs_full_model(small_display, csf, ladder):
    lum = decode(checkerboard(), small_display)
    qmap = schedule_image(lum, small_display, csf, ladder, 16)
    assert qmap.grid.shape == (23, 40)
    assert np.mean(qmap.grid == ladder.baseline.id) >= 0.9


@pytest.mark.parametrize("seed, slope", [(5, 1.0), (13, 1.0), (21, 0.8), (34, 1.2), (55, 1.0)])
def test_foveation_cheapens_periphery(small_display, csf, ladder, seed, slope):
    lum = decode(make_natural(seed, shape=(360, 640), slope=slope), small_display)
    qmap = schedule_image(lum, small_display, csf, ladder, 16, gaze=(320, 180))
    costs = qmap.patch_costs(ladder)
    far = costs[qmap.eccentricity > 15.0]
    near = costs[qmap.eccentricity < 3.0]
    assert far.size and near.size
    assert far.mean() <= near.mean()


@settings(max_examples=5, deadline=None)
@given(st.integers(0, 1000), st.floats(1.0, 300.0))
def test_flat_patches_leave_others_unchanged(seed, level):
    image = decode(make_natural(seed, shape=(64, 96)), VIEWING)
    extended = np.full((80, 112), level)
    extended[:64, :96] = image
    base = schedule_image(image, VIEWING, CSF, LADDER, 16)
    grown = schedule_image(extended, VIEWING, CSF, LADDER, 16)
    np.testing.assert_array_equal(grown.grid[:4, :6], base.grid)
    np.testing.assert_array_equal(grown.t_vectors[:4, :6], base.t_vectors)
    assert np.all(grown.grid[4, :] == LADDER.cheapest.id)
    assert np.all(grown.grid[:, 6] == LADDER.cheapest.id)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 3), st.integers(0, 5))
def test_ratio_is_one_only_when_all_baseline(row, col):
    display = ViewingConditions(resolution=(640, 360))
    profiles = ProfileSet([
        VariantProfile(id=0, name='low_only', cost_flops=1.0, t_hat=[1.0, 0.0, 0.0]),
        VariantProfile(id=1, name='full', cost_flops=2.0, t_hat=[1.0, 1.0, 1.0]),
    ])
    lum = decode(checkerboard(shape=(64, 96)), display)
    qmap = schedule_image(lum, display, CSF, profiles, 16)
    assert np.all(qmap.grid == 1)
    assert qmap.ratio == 1.0

    lum[16 * row:16 * (row + 1), 16 * col:16 * (col + 1)] = lum.mean()
    qmap = schedule_image(lum, display, CSF, profiles, 16)
    assert qmap.grid[row, col] == 0
    assert np.count_nonzero(qmap.grid == 1) == qmap.n_patches - 1
    assert qmap.ratio < 1.0


def test_border_patches_and_heatmap(viewing, csf, ladder):
    lum = decode(make_natural(6, shape=(100, 70)), viewing)
    qmap = schedule_image(lum, viewing, csf, ladder, 16)
    assert qmap.grid.shape == (7, 5)
    gray = heatmap_levels(qmap, ladder)
    assert gray.shape == (100, 70)
    shades = {0: 0, 1: 64, 2: 128, 3: 191, 4: 255}
    assert gray[99, 69] == shades[int(qmap.grid[6, 4])]
    assert set(np.unique(gray)) <= set(shades.values())


def test_single_patch_fallback(viewing, csf, ladder):
    with pytest.warns(HvpfWarning):
        qmap = schedule_image(np.full((12, 20), 50.0), viewing, csf, ladder, 16)
    assert qmap.grid.shape == (1, 1)
    assert heatmap_levels(qmap, ladder).shape == (12, 20)


def test_patch_smaller_than_pyramid(viewing, csf, ladder):
    with pytest.raises(InputError):
        schedule_image(np.ones((64, 64)), viewing, csf, ladder, 4)


def test_cost_report(viewing, csf, ladder):
    lum = decode(make_natural(7, shape=(64, 96)), viewing)
    qmap = schedule_image(lum, viewing, csf, ladder, 16)
    report = cost_report(qmap, ladder)
    assert report['n_patches'] == 24
    assert sum(h['count'] for h in report['histogram']) == 24
    assert sum(h['fraction'] for h in report['histogram']) == pytest.approx(1.0)
    assert report['cost_baseline'] == 24 * 4.8e8
    assert 0 < report['ratio'] <= 1
    assert report['ratio_with_overhead'] > report['ratio']
    assert report['baseline_id'] == 4


def test_deterministic_across_thread_counts(viewing, csf, ladder):
    lum = decode(make_natural(8, shape=(96, 96)), viewing)
    single = schedule_image(lum, viewing, csf, ladder, 16, threads=1)
    pooled = schedule_image(lum, viewing, csf, ladder, 16, threads=4)
    np.testing.assert_array_equal(single.grid, pooled.grid)
    np.testing.assert_array_equal(single.t_vectors, pooled.t_vectors)


# ---------------------------------------------------------------------------
# Sequences
# ---------------------------------------------------------------------------

def test_static_clip_matches_single_image(csf, ladder):
    vc = ViewingConditions(resolution=(640, 360), fps=24.0)
    frame = decode(make_natural(9, shape=(96, 128)), vc)
    maps = schedule_sequence([frame] * 4, vc, csf, ladder, 16)
    still = schedule_image(frame, vc, csf, ladder, 16)
    assert len(maps) == 4
    for qmap in maps:
        np.testing.assert_array_equal(qmap.grid, still.grid)
        np.testing.assert_array_equal(qmap.t_vectors, still.t_vectors)


@pytest.mark.parametrize("seed", [10, 11, 12])
def test_panning_never_costs_more(csf, ladder, seed):
    vc = ViewingConditions(resolution=(640, 360), fps=24.0)
    base = decode(make_natural(seed, shape=(192, 320)), vc)
    static = schedule_sequence([base] * 3, vc, csf, ladder, 16)
    panned = schedule_sequence([np.roll(base, 8 * i, axis=1) for i in range(3)], vc, csf, ladder, 16)
    assert sum(q.cost_total for q in panned) <= sum(q.cost_total for q in static)


def test_clip_needs_two_frames(viewing, csf, ladder):
    with pytest.raises(InputError):
        schedule_sequence([np.ones((32, 32))], viewing, csf, ladder, 16)
