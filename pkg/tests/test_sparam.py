import io

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cablewatch.channel import CableSpec, CableState, FaultSpec, LoadSpec, ValidationError
from cablewatch.instruments import MeasurementSetup, measure_sparams
from cablewatch.sparam import (CfrTrace, SParamRecord, average_cfr, cfr_from_sparams,
                               classify_sparam, derive_thresholds, parse_touchstone,
                               write_touchstone)
from cablewatch.thresholds import CalibrationError, ThresholdPair
from cablewatch.touchstone import TouchstoneError, format_touchstone, read_touchstone

MA_THROUGH = """! ideal through
# MHz S MA R 50
1 0 0 1 0 1 0 0 0
2 0 0 1 0 1 0 0 0
3 0 0 1 0 1 0 0 0
"""


def test_ma_through_parses_to_unity():
    rec = parse_touchstone(io.StringIO(MA_THROUGH))
    np.testing.assert_array_equal(rec.freq_grid_hz, [1e6, 2e6, 3e6])
    np.testing.assert_array_equal(rec.s21, [1 + 0j] * 3)
    assert rec.z_ref == 50.0


def _record(seed=0, n=21):
    rng = np.random.default_rng(seed)
    f = np.linspace(2e6, 40e6, n)
    c = [rng.normal(size=n) + 1j * rng.normal(size=n) for _ in range(4)]
    return SParamRecord(f, *c, instant_id=7, load_w=200.0, z_ref=100.0)


@pytest.mark.parametrize("fmt", ["MA", "DB"])
def test_encodings_agree_with_ri(fmt):
    rec = _record()
    ri = read_touchstone(io.StringIO(format_touchstone(rec.freq_grid_hz, rec.matrix, 100.0, "RI")))
    other = read_touchstone(io.StringIO(format_touchstone(rec.freq_grid_hz, rec.matrix, 100.0, fmt)))
    np.testing.assert_allclose(other["s"], ri["s"], rtol=0, atol=1e-12)


@pytest.mark.parametrize("unit, scale", [("HZ", 1), ("KHZ", 1e3), ("MHZ", 1e6), ("GHZ", 1e9)])
def test_frequency_units(unit, scale):
    text = f"# {unit} S RI R 50\n1.5 0 0 1 0 1 0 0 0\n2.5 0 0 1 0 1 0 0 0\n"
    assert read_touchstone(io.StringIO(text))["freq_hz"].tolist() == [1.5 * scale, 2.5 * scale]


def test_round_trip_bit_identical(tmp_path):
    rec = measure_sparams(MeasurementSetup(), CableSpec(70.0), [FaultSpec(35, 0.01)], 4, 12, 400.0)
    path = write_touchstone(rec, tmp_path / "x.s2p")
    back = parse_touchstone(path)
    for name in ("freq_grid_hz", "s11", "s21", "s12", "s22"):
        assert np.array_equal(getattr(back, name), getattr(rec, name))
    assert (back.instant_id, back.load_w, back.z_ref) == (12, 400.0, rec.z_ref)


def test_rows_may_wrap_across_lines():
    text = "# HZ S RI R 50\n1 0 0 1 0\n 1 0 0 0\n2 0 0 1 0 1 0 0 0\n"
    assert read_touchstone(io.StringIO(text))["s"].shape == (2, 2, 2)


@pytest.mark.parametrize("text, line", [
    ("# HZ S XX R 50\n1 0 0 1 0 1 0 0 0\n", 1),
    ("# HZ Z RI R 50\n1 0 0 1 0 1 0 0 0\n", 1),
    ("# HZ S RI R\n1 0 0 1 0 1 0 0 0\n", 1),
    ("# HZ S RI R 50\n2 0 0 1 0 1 0 0 0\n1 0 0 1 0 1 0 0 0\n", 3),
    ("# HZ S RI R 50\n1 0 0 1 0 1 0 0 0\n2 0 0 1 0 1 0 0 0\n2 0 0 1 0 1 0 0 0\n", 4),
    ("# HZ S RI R 50\n1 0 0\n", 2),
    ("# HZ S RI R 50\n1 0 0 1 0 1 0 0 0 5 0 0 1 0 1 0 0 0 7\n", 2),
    ("# HZ S RI R 50\n1 0 0 1 0 1 0 0 zz\n", 2),
    ("1 0 0 1 0 1 0 0 0\n", 1),
])
def test_parse_errors_name_the_line(text, line):
    with pytest.raises(TouchstoneError) as exc:
        read_touchstone(io.StringIO(text))
    assert exc.value.line == line
    assert f"line {line}" in str(exc.value)


def test_one_port_file_rejected(tmp_path):
    p = tmp_path / "a.s1p"
    p.write_text("# HZ S RI R 50\n1 0 0\n")
    with pytest.raises(TouchstoneError):
        read_touchstone(p)


def test_record_grid_mismatch_rejected():
    with pytest.raises(ValidationError):
        SParamRecord(np.arange(3.0), np.zeros(3), np.zeros(2), np.zeros(3), np.zeros(3))


def test_cfr_examples():
    f = np.linspace(1e6, 2e6, 5)
    through = SParamRecord(f, np.zeros(5), np.ones(5, complex), np.ones(5), np.zeros(5))
    assert cfr_from_sparams(through).psi1 == 1.0
    phased = SParamRecord(f, np.zeros(5), 0.5 * np.exp(1j * np.linspace(0, 7, 5)),
                          np.ones(5), np.zeros(5))
    assert cfr_from_sparams(phased).psi1 == pytest.approx(0.5, abs=1e-15)


def test_large_fault_lowers_cfr():
    setup = MeasurementSetup(vna_noise=0.0, vna_gain_jitter=0.0)
    cable = CableSpec(70.0)
    h = cfr_from_sparams(measure_sparams(setup, cable, [], 0, 0)).psi1
    l_ = cfr_from_sparams(measure_sparams(setup, cable, [FaultSpec(35, 0.05)], 0, 0)).psi1
    assert l_ < h


@given(st.floats(0.01, 10.0))
def test_scale_consistency(k):
    rec = _record(3)
    scaled = SParamRecord(rec.freq_grid_hz, rec.s11, k * rec.s21, rec.s12, rec.s22)
    assert cfr_from_sparams(scaled).psi1 == pytest.approx(k * cfr_from_sparams(rec).psi1,
                                                          rel=1e-12)


def test_average_examples():
    t = cfr_from_sparams(_record(1))
    same = average_cfr([t] * 5)
    np.testing.assert_allclose(same.h, t.h, rtol=1e-15)
    cancel = average_cfr([t, CfrTrace(t.freq_grid_hz, -t.h)])
    assert np.all(cancel.h == 0) and cancel.psi1 == 0.0


def test_average_is_permutation_invariant():
    ts = [cfr_from_sparams(_record(s)) for s in range(4)]
    a, b = average_cfr(ts), average_cfr(ts[::-1])
    np.testing.assert_allclose(a.h, b.h, rtol=1e-14)


def test_average_rejects_mixed_grids():
    t = cfr_from_sparams(_record(1))
    with pytest.raises(ValidationError):
        average_cfr([t, CfrTrace(t.freq_grid_hz * 2, t.h)])
    with pytest.raises(ValidationError):
        average_cfr([])


def test_averaging_over_instants_reduces_spread():
    setup = MeasurementSetup()
    cable = CableSpec(70.0)
    schedule = (0.0, 200.0, 400.0, 600.0)
    single, averaged = [], []
    for g in range(8):
        traces = [cfr_from_sparams(measure_sparams(setup, cable, [], 1000 + g, i,
                                                   schedule[i % 4])) for i in range(100)]
        single.append(traces[0].psi1)
        single.extend(t.psi1 for t in traces[1:10])
        averaged.append(average_cfr(traces).psi1)
    assert np.std(averaged) <= np.std(single) / 3


def test_threshold_midpoints_and_order_invariance():
    labeled = {"H": [1.0], "F_s": [0.8], "F_l": [0.4]}
    th = derive_thresholds(labeled)
    assert th.th_s == pytest.approx(0.1) and th.th_l == pytest.approx(0.4)
    again = derive_thresholds(dict(reversed(list(labeled.items()))))
    assert again == th


def test_unordered_class_means_fail():
    with pytest.raises(CalibrationError):
        derive_thresholds({"H": [0.5], "F_s": [0.9], "F_l": [0.1]})


def test_classify_sparam_examples():
    th = ThresholdPair(0.1, 0.4, reference=1.0, sign=-1)
    assert classify_sparam(1.0, th) == (CableState.H, 0)
    assert classify_sparam(0.6, th) == (CableState.F_l, 1)
    assert classify_sparam(1.0 - 0.25, th) == (CableState.F_s, 0)
    trace = CfrTrace(np.array([1.0, 2.0]), np.array([0.6, 0.6 + 0j]))
    assert classify_sparam(trace, th)[1] == 1


def test_well_separated_calibration_reproduces_labels():
    rng = np.random.default_rng(0)
    means = {"H": 1.0, "F_s": 0.9, "F_l": 0.7}
    labeled = {k: m + rng.normal(0, 0.01, 50) for k, m in means.items()}
    th = derive_thresholds(labeled)
    for k, vals in labeled.items():
        assert all(classify_sparam(v, th)[0] == CableState.parse(k) for v in vals)


def test_passive_cable_record():
    rec = measure_sparams(MeasurementSetup(vna_noise=0.0, vna_gain_jitter=0.0), CableSpec(70.0),
                          [], 0, 0, LoadSpec(200).power_w)
    assert rec.is_passive
