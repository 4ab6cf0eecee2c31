import io

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cablewatch.channel import CableSpec, CableState, FaultSpec, ValidationError
from cablewatch.instruments import MeasurementSetup, ideal_snr, measure_snr
from cablewatch.snr import (SnrParseError, SnrSummary, SnrTrace, classify_snr,
                            default_carrier_grid, derive_snr_thresholds, format_snr_csv,
                            parse_snr_csv, summarize_snr, write_snr_csv)
from cablewatch.thresholds import CalibrationError, ThresholdPair

HEADER = "carrier_hz,snr_db,end,instant,load_w\n"


def test_parse_simple_export():
    text = HEADER + "2000000,30.5,near,0,200\n2500000,29.5,near,0,200\n"
    (t,) = parse_snr_csv(io.StringIO(text))
    np.testing.assert_array_equal(t.carrier_grid_hz, [2e6, 2.5e6])
    np.testing.assert_array_equal(t.snr_db, [30.5, 29.5])
    assert (t.end_tag, t.instant_id, t.load_w) == ("near", 0, 200.0)


def test_both_ends_give_two_traces_in_order():
    text = HEADER + "1,10,far,3,none\n1,20,near,3,none\n2,11,far,3,none\n2,21,near,3,none\n"
    far, near = parse_snr_csv(io.StringIO(text))
    assert far.end_tag == "far" and near.end_tag == "near"
    assert far.load_w is None
    np.testing.assert_array_equal(near.snr_db, [20, 21])


def test_missing_column_reported_on_header_row():
    with pytest.raises(SnrParseError) as exc:
        parse_snr_csv(io.StringIO("carrier_hz,snr_db,end,instant\n1,2,near,0\n"))
    assert exc.value.row == 0 and "load_w" in str(exc.value)


@pytest.mark.parametrize("bad_row, rowno", [
    ("2,abc,near,0,0\n", 2), ("2,,near,0,0\n", 2), ("2,5,middle,0,0\n", 2),
    ("2,nan,near,0,0\n", 2), ("2,5,near,x,0\n", 2)])
def test_bad_cells_report_their_row(bad_row, rowno):
    with pytest.raises(SnrParseError) as exc:
        parse_snr_csv(io.StringIO(HEADER + "1,5,near,0,0\n" + bad_row))
    assert exc.value.row == rowno and f"row {rowno}" in str(exc.value)


def test_non_increasing_carriers_rejected():
    with pytest.raises(SnrParseError):
        parse_snr_csv(io.StringIO(HEADER + "2,5,near,0,0\n1,5,near,0,0\n"))


def test_round_trip_917_carriers(tmp_path):
    traces = measure_snr(MeasurementSetup(), CableSpec(70.0), [FaultSpec(35, 0.01)], 7, 4, 600.0)
    assert traces[0].carrier_grid_hz.size == 917
    back = parse_snr_csv(write_snr_csv(traces, tmp_path / "s.csv"))
    assert len(back) == 2
    for a, b in zip(traces, back):
        assert np.array_equal(a.carrier_grid_hz, b.carrier_grid_hz)
        assert np.array_equal(a.snr_db, b.snr_db)
        assert (a.end_tag, a.instant_id, a.load_w) == (b.end_tag, b.instant_id, b.load_w)
    assert format_snr_csv(back) == format_snr_csv(traces)


def test_default_grid():
    g = default_carrier_grid()
    assert g.size == 917 and g[0] == 2e6 and g[-1] == 28e6


@pytest.mark.parametrize("kw", [dict(carrier_grid_hz=[], snr_db=[]),
                                dict(carrier_grid_hz=[1, 2], snr_db=[1]),
                                dict(carrier_grid_hz=[2, 1], snr_db=[1, 1]),
                                dict(carrier_grid_hz=[1, 2], snr_db=[1, np.inf]),
                                dict(carrier_grid_hz=[1], snr_db=[1], end_tag="mid")])
def test_trace_validation(kw):
    with pytest.raises(ValidationError):
        SnrTrace(**kw)


def test_psi2_examples():
    flat = SnrTrace(np.arange(1.0, 5.0), np.full(4, 30.0))
    assert summarize_snr(flat).psi2 == 30.0
    ramp = SnrTrace(np.arange(1.0, 4.0), np.array([10.0, 20.0, 30.0]))
    s = summarize_snr(ramp, reference=25.0)
    assert s.psi2 == 20.0 and s.deviation == 5.0
    assert summarize_snr(ramp).deviation == 0.0


def test_threshold_example():
    th = derive_snr_thresholds({"H": [0.0], "F_s": [-3.0], "F_l": [-9.0]})
    assert th.th_s == pytest.approx(1.5) and th.th_l == pytest.approx(6.0)
    assert th.reference == 0.0
    summaries = {"H": [SnrSummary(0.0, 0.0)], "F_s": [SnrSummary(-3.0, 0.0)],
                 "F_l": [SnrSummary(-9.0, 0.0)]}
    assert derive_snr_thresholds(summaries) == th


def test_thresholds_accept_single_values_per_class():
    th = derive_snr_thresholds({"H": 30.0, "F_s": 29.0, "F_l": 27.0})
    assert th.th_s == pytest.approx(0.5) and th.th_l == pytest.approx(2.0)


def test_thresholds_need_every_class():
    with pytest.raises(CalibrationError):
        derive_snr_thresholds({"H": [30.0], "F_l": [20.0]})


def test_classify_snr_examples():
    th = ThresholdPair(1.5, 6.0, reference=30.0, sign=-1)
    assert classify_snr(30.0, th) == (CableState.H, 0)
    assert classify_snr(28.5, th) == (CableState.F_s, 0)
    assert classify_snr(SnrSummary(24.0, 6.0), th) == (CableState.F_l, 1)


@given(st.lists(st.floats(-20, 60), min_size=3, max_size=30), st.floats(-15, 15))
def test_mean_shift_equivariance(values, c):
    grid = np.arange(1.0, len(values) + 1)
    base = summarize_snr(SnrTrace(grid, np.array(values)), reference=10.0)
    shifted = summarize_snr(SnrTrace(grid, np.array(values) + c), reference=10.0)
    assert shifted.psi2 == pytest.approx(base.psi2 + c, abs=1e-9)
    assert shifted.deviation == pytest.approx(base.deviation - c, abs=1e-9)


@pytest.mark.parametrize("faults", [[], [FaultSpec(35, 0.01)], [FaultSpec(20, 0.05)]])
def test_reciprocal_cable_near_and_far_agree(faults):
    setup = MeasurementSetup()
    near = ideal_snr(setup, CableSpec(70.0), faults, "near")
    far = ideal_snr(setup, CableSpec(70.0), faults, "far")
    assert abs(near.mean() - far.mean()) <= 1e-9


def test_fault_severity_lowers_mean_snr():
    setup = MeasurementSetup()
    psi = [ideal_snr(setup, CableSpec(70.0), fl).mean()
           for fl in ([], [FaultSpec(35, 0.01)], [FaultSpec(35, 0.05)])]
    assert psi[0] > psi[1] > psi[2]


def test_measurement_is_seeded():
    a = measure_snr(MeasurementSetup(), CableSpec(70.0), [], 1, 2)
    b = measure_snr(MeasurementSetup(), CableSpec(70.0), [], 1, 2)
    c = measure_snr(MeasurementSetup(), CableSpec(70.0), [], 1, 3)
    assert np.array_equal(a[0].snr_db, b[0].snr_db)
    assert not np.array_equal(a[0].snr_db, c[0].snr_db)
