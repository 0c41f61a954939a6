import numpy as np
import pytest

from vppcosim import data_path
from vppcosim.errors import ConfigError, ParseError, ScenarioError
from vppcosim.feeder import load_feeder
from vppcosim.profiles import (
    TimeSeries,
    interpolate_linear,
    load_profile_csv,
    load_profile_set,
    scale_irradiance_to_pv,
)


class TestInterpolateLinear:
    def test_midpoint_of_hourly_samples(self):
        s = TimeSeries(0.0, 3600.0, np.array([0.0, 100.0]))
        out = interpolate_linear(s, 1800.0)
        assert out.values == pytest.approx([0.0, 50.0, 100.0])

    def test_constant_series_stays_constant(self):
        s = TimeSeries(0.0, 3600.0, np.array([7.0, 7.0, 7.0]))
        out = interpolate_linear(s, 60.0)
        assert np.all(out.values == 7.0)

    def test_one_second_resampling_of_hourly_ramp(self):
        s = TimeSeries(0.0, 3600.0, np.array([0.0, 100.0]))
        out = interpolate_linear(s, 1.0)
        assert len(out.values) == 3601
        assert out.values[36] == pytest.approx(1.0)

    def test_knots_preserved_exactly(self):
        rng = np.random.default_rng(31)
        vals = rng.uniform(0, 5, 25)
        s = TimeSeries(0.0, 3600.0, vals)
        out = interpolate_linear(s, 1.0)
        assert out.values[::3600] == pytest.approx(vals, abs=0)

    def test_values_bounded_by_bracketing_knots(self):
        rng = np.random.default_rng(32)
        vals = rng.uniform(0, 5, 10)
        s = TimeSeries(0.0, 100.0, vals)
        out = interpolate_linear(s, 7.0)
        for i, v in enumerate(out.values):
            t = i * 7.0
            j = min(int(t // 100), len(vals) - 2)
            lo, hi = sorted((vals[j], vals[j + 1]))
            assert lo - 1e-12 <= v <= hi + 1e-12

    def test_single_sample_warns_and_holds(self):
        s = TimeSeries(0.0, 3600.0, np.array([5.0]))
        with pytest.warns(UserWarning, match="held constant"):
            out = interpolate_linear(s, 1.0)
        assert out.values_at(np.array([0.0, 9999.0])) == pytest.approx([5.0, 5.0])


class TestIrradianceScaling:
    def test_reference_irradiance_gives_capacity(self):
        s = TimeSeries(0.0, 3600.0, np.array([1000.0, 1000.0]))
        out = scale_irradiance_to_pv(s, 100.0)
        assert np.all(out.values == 100.0)
        assert out.unit == "kw"

    def test_zero_irradiance_gives_zero(self):
        s = TimeSeries(0.0, 3600.0, np.array([0.0, 0.0]))
        assert np.all(scale_irradiance_to_pv(s, 100.0).values == 0.0)

    def test_linear_below_reference(self):
        s = TimeSeries(0.0, 3600.0, np.array([500.0, 500.0]))
        assert np.all(scale_irradiance_to_pv(s, 100.0, 1000.0).values == 50.0)

    def test_capped_at_capacity(self):
        s = TimeSeries(0.0, 3600.0, np.array([1400.0, 900.0]))
        out = scale_irradiance_to_pv(s, 100.0)
        assert out.values == pytest.approx([100.0, 90.0])

    def test_negative_samples_clamped_with_warning(self):
        s = TimeSeries(0.0, 3600.0, np.array([-5.0, 500.0]))
        with pytest.warns(UserWarning, match="clamped"):
            out = scale_irradiance_to_pv(s, 100.0)
        assert out.values[0] == 0.0

    def test_homogeneous_in_capacity(self):
        s = TimeSeries(0.0, 3600.0, np.array([300.0, 700.0]))
        a = scale_irradiance_to_pv(s, 100.0).values
        b = scale_irradiance_to_pv(s, 200.0).values
        assert b == pytest.approx(2 * a)

    def test_bad_reference_rejected(self):
        s = TimeSeries(0.0, 3600.0, np.array([1.0, 2.0]))
        with pytest.raises(ConfigError):
            scale_irradiance_to_pv(s, 100.0, 0.0)


class TestCsvParsing:
    def test_two_rows_hourly(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text("0,1.0\n3600,2.0\n")
        s = load_profile_csv(p)
        assert s.resolution_s == 3600.0
        assert s.values == pytest.approx([1.0, 2.0])

    def test_header_accepted(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text("time_sec,value\n0,1.0\n60,2.0\n")
        s = load_profile_csv(p)
        assert s.resolution_s == 60.0

    def test_unknown_header_rejected(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text("when,what\n0,1.0\n")
        with pytest.raises(ParseError, match="header"):
            load_profile_csv(p)

    def test_non_monotone_time_rejected(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text("0,1.0\n3600,2.0\n3600,3.0\n")
        with pytest.raises(ParseError, match=":3"):
            load_profile_csv(p)

    def test_ragged_row_rejected_with_line(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text("0,1.0\n3600,2.0,9\n")
        with pytest.raises(ParseError, match=":2"):
            load_profile_csv(p)

    def test_empty_file_rejected(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text("")
        with pytest.raises(ParseError, match="no samples"):
            load_profile_csv(p)

    def test_non_uniform_spacing_rejected(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text("0,1.0\n100,2.0\n350,3.0\n")
        with pytest.raises(ParseError, match="non-uniform"):
            load_profile_csv(p)

    def test_shipped_pv_fixture_peaks_at_stated_maximum(self):
        s = load_profile_csv(data_path("profiles/pv_midday.csv"), unit="w_m2")
        assert s.resolution_s == 3600.0
        assert s.values.max() == 980.0
        peak_hour = float(s.times()[np.argmax(s.values)]) / 3600.0
        assert 11 <= peak_hour <= 15


class TestProfileSet:
    def test_desk_manifest(self, desk_feeder):
        pset = load_profile_set(data_path("profiles/desk_constant.json"), desk_feeder)
        assert pset.power_base_kva == 1000.0
        assert set(pset.p_avail) == {2, 4}
        assert pset.rating(2, default=0.0) == pytest.approx(0.35)
        res = pset.resolve(desk_feeder, 0.0, 10, 1.0)
        assert res.p_avail[2] == pytest.approx(np.full(10, 0.30))
        assert res.load_p[0] == pytest.approx([0.10, 0.15, 0.10, 0.05])

    def test_ieee37_manifest_converts_to_per_unit(self):
        feeder = load_feeder(data_path("ieee37_equiv.json"))
        pset = load_profile_set(data_path("profiles/ieee37.json"), feeder)
        assert len(pset.p_avail) == 17
        res = pset.resolve(feeder, 43200.0, 3600, 1.0)
        noon_avail = res.p_avail[4][0]
        assert noon_avail == pytest.approx(0.92 * 100.0 / 2500.0)
        assert pset.rating(4, default=0.0) == pytest.approx(110.0 / 2500.0)
        assert res.load_p[0, 0] == pytest.approx(0.92 * 0.252)

    def test_horizon_exhaustion_is_scenario_error(self, desk_feeder):
        pset = load_profile_set(data_path("profiles/desk_ramp.json"), desk_feeder)
        with pytest.raises(ScenarioError, match="covers"):
            pset.resolve(desk_feeder, 0.0, 5000, 1.0)

    def test_unknown_bus_in_manifest_rejected(self, tmp_path, desk_feeder):
        p = tmp_path / "m.json"
        p.write_text('{"power_base_kva": 1000, "loads": {"9": {"p": {"const": 1.0}}}}')
        pset = load_profile_set(p, desk_feeder)
        with pytest.raises(ConfigError, match="unknown bus"):
            pset.resolve(desk_feeder, 0.0, 10, 1.0)
