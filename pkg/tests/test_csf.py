import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from config import get_data_path
from modules.csf import AnalyticCsf, CsfQuery, TableCsf, build_csf, load_table, sensitivity
from modules.errors import ConfigurationError, FormatError, HvpfWarning, InputError


def test_peak_sensitivity_at_high_luminance(csf):
    assert sensitivity(csf, CsfQuery(3.0, 0.0, 1e12, 0.0)) == pytest.approx(200.0, rel=1e-6)


def test_unimodal_with_peak_between_2_and_6(csf):
    freqs = np.linspace(0.05, 30.0, 600)
    values = csf.evaluate(freqs, 0.0, 100.0, 0.0)
    peak = int(np.argmax(values))
    assert 2.0 <= freqs[peak] <= 6.0
    assert np.all(np.diff(values[:peak + 1]) >= 0)
    assert np.all(np.diff(values[peak:]) <= 0)


def test_eccentricity_lowers_sensitivity(csf):
    assert sensitivity(csf, CsfQuery(6.0, 0.0, 100.0, 10.0)) < sensitivity(csf, CsfQuery(6.0, 0.0, 100.0, 0.0))


def test_temporal_decay_above_corner(csf):
    static = sensitivity(csf, CsfQuery(3.0, 0.0, 100.0, 0.0))
    assert sensitivity(csf, CsfQuery(3.0, 5.0, 100.0, 0.0)) == pytest.approx(static)
    assert sensitivity(csf, CsfQuery(3.0, 13.0, 100.0, 0.0)) == pytest.approx(static * math.exp(-1))


def test_normalized_contrast_example(csf):
    assert 0.01 * sensitivity(csf, CsfQuery(3.0, 0.0, 100.0, 0.0)) == pytest.approx(1.633, abs=1e-3)


def test_zero_frequency_uses_floor_response(csf):
    gain = math.sqrt(100.0 / 150.0)
    assert csf.evaluate(0.0) == pytest.approx(200.0 * 0.2 * gain)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.1, 40.0), st.floats(0.0, 40.0), st.floats(0.0, 40.0))
def test_non_increasing_in_eccentricity(f, e1, e2):
    low, high = sorted((e1, e2))
    csf = AnalyticCsf()
    assert csf.evaluate(f, 0.0, 100.0, high) <= csf.evaluate(f, 0.0, 100.0, low)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.1, 40.0), st.floats(0.0, 60.0), st.floats(0.0, 60.0))
def test_non_increasing_in_temporal_frequency(f, w1, w2):
    low, high = sorted((w1, w2))
    csf = AnalyticCsf()
    assert csf.evaluate(f, high) <= csf.evaluate(f, low)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.1, 40.0), st.floats(0.01, 1e4), st.floats(0.01, 1e4))
def test_non_decreasing_in_luminance(f, l1, l2):
    low, high = sorted((l1, l2))
    csf = AnalyticCsf()
    assert csf.evaluate(f, 0.0, high) >= csf.evaluate(f, 0.0, low)


def test_always_positive(csf):
    assert csf.evaluate(500.0, 200.0, 0.01, 80.0) > 0


@pytest.mark.parametrize("args", [
    (-1.0, 0.0, 100.0, 0.0),
    (1.0, 0.0, 0.0, 0.0),
    (math.nan, 0.0, 100.0, 0.0),
])
def test_invalid_query(args):
    with pytest.raises(InputError):
        CsfQuery(*args)


def test_overrides():
    assert AnalyticCsf.with_overrides({'f_peak': 4.0}).f_peak == 4.0
    with pytest.raises(ConfigurationError):
        AnalyticCsf.with_overrides({'unknown': 1.0})
    with pytest.raises(ConfigurationError):
        AnalyticCsf.with_overrides({'s_max': -1.0})


# ---------------------------------------------------------------------------
# Lookup table
# ---------------------------------------------------------------------------

def _line_table():
    return TableCsf([[1.0, 2.0], [0.0], [100.0], [0.0]], np.array([10.0, 20.0]).reshape(2, 1, 1, 1))


def test_table_exact_at_nodes_and_linear_between():
    table = _line_table()
    assert sensitivity(table, CsfQuery(1.0)) == pytest.approx(10.0)
    assert sensitivity(table, CsfQuery(2.0)) == pytest.approx(20.0)
    assert sensitivity(table, CsfQuery(1.5)) == pytest.approx(15.0)


def test_table_clamps_outside_hull():
    table = _line_table()
    value, clamped = table.lookup(CsfQuery(5.0, 3.0))
    assert clamped
    assert value == pytest.approx(20.0)
    with pytest.warns(HvpfWarning):
        table.sensitivity(CsfQuery(5.0))


def test_table_rejects_unsorted_axis():
    with pytest.raises(ConfigurationError):
        TableCsf([[3.0, 1.0, 5.0], [0.0], [100.0], [0.0]], np.ones((3, 1, 1, 1)))


def test_bundled_table_matches_analytic_nodes(csf):
    table = load_table(get_data_path('csf_table_example.csv'))
    assert [a.size for a in table.axes] == [5, 1, 2, 2]
    for f in (0.5, 2.0, 8.0):
        for lum in (10.0, 100.0):
            q = CsfQuery(f, 0.0, lum, 10.0)
            assert sensitivity(table, q) == pytest.approx(sensitivity(csf, q), rel=1e-3, abs=0.01)


def test_table_interpolates_vectorized():
    table = load_table(get_data_path('csf_table_example.csv'))
    values = table.evaluate(np.array([2.0, 3.0, 4.0]), 0.0, 100.0, 0.0)
    assert values.shape == (3,)
    assert values[1] == pytest.approx(0.5 * (values[0] + values[2]))


def _write(tmp_path, text):
    path = tmp_path / "csf.csv"
    path.write_text(text)
    return str(path)


HEADER = "f_spatial_cpd,f_temporal_hz,luminance_nits,eccentricity_deg,sensitivity\n"


def test_load_table_non_numeric_reports_line(tmp_path):
    path = _write(tmp_path, HEADER + "1,0,100,0,10\n2,0,100,0,abc\n")
    with pytest.raises(FormatError) as info:
        load_table(path)
    assert info.value.line == 3


def test_load_table_missing_column(tmp_path):
    path = _write(tmp_path, "f_spatial_cpd,sensitivity\n1,10\n")
    with pytest.raises(FormatError) as info:
        load_table(path)
    assert info.value.line == 1


def test_load_table_ragged_grid(tmp_path):
    path = _write(tmp_path, HEADER + "1,0,100,0,10\n2,0,100,0,20\n1,0,200,0,12\n")
    with pytest.raises(FormatError, match="Ragged") as info:
        load_table(path)
    # f = 2 on line 3 has no L = 200 partner
    assert info.value.line == 3


def test_load_table_nonpositive(tmp_path):
    path = _write(tmp_path, HEADER + "1,0,100,0,10\n2,0,100,0,0\n")
    with pytest.raises(FormatError) as info:
        load_table(path)
    assert info.value.line == 3


def test_build_csf_kinds(tmp_path):
    assert build_csf().kind == 'default_analytic'
    assert build_csf('lookup_table', get_data_path('csf_table_example.csv')).kind == 'lookup_table'
    with pytest.raises(ConfigurationError):
        build_csf('lookup_table')
    with pytest.raises(ConfigurationError):
        build_csf('barten')
