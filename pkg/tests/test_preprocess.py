import io
import math

import numpy as np
import pytest

from flightwatch.flightdata import FlightLabels
from flightwatch.geometry import DistanceTrace
from flightwatch.preprocess import (
    HeadingWindow,
    PreprocessConfig,
    attach_labels,
    filter_nominal,
    filter_nominal_from_windows,
    make_windows,
    read_windows_csv,
    resample_uniform,
    unwrap_heading,
    write_windows_csv,
)

CFG = PreprocessConfig()


def _uniform_series(duration, rate=5.0):
    n = int(round(duration * rate)) + 1
    return np.arange(n) / rate


class TestUnwrap:
    def test_wrap_up(self):
        # 10 deg anti-clockwise from 175 must become a 10 deg step, not 350
        assert np.allclose(unwrap_heading([175.0, -175.0]), [175.0, 185.0])

    def test_wrap_down(self):
        assert np.allclose(unwrap_heading([-170.0, 170.0]), [-170.0, -190.0])

    def test_no_crossing_unchanged(self):
        assert np.allclose(unwrap_heading([0.0, 10.0, 20.0]), [0.0, 10.0, 20.0])

    def test_properties_random(self):
        rng = np.random.default_rng(11)
        for _ in range(300):
            raw = rng.uniform(-180.0, 180.0, size=rng.integers(2, 60))
            out = unwrap_heading(raw)
            assert out[0] == raw[0]
            # elementwise equal mod 360
            assert np.allclose((out - raw + 180.0) % 360.0 - 180.0, 0.0, atol=1e-9)
            assert np.all(np.abs(np.diff(out)) <= 180.0 + 1e-9)

    def test_continuous_rotation(self):
        # constantly rotating drone: unwrap recovers the linear ramp
        true = np.linspace(0.0, 720.0, 100)
        wrapped = (true + 180.0) % 360.0 - 180.0
        assert np.allclose(unwrap_heading(wrapped), true, atol=1e-9)


class TestResample:
    def test_linear_interpolation(self):
        ts, vs = resample_uniform([0.0, 1.0], [0.0, 10.0], rate=5.0)
        assert np.allclose(ts, [0.0, 0.2, 0.4, 0.6, 0.8, 1.0])
        assert np.allclose(vs, [0.0, 2.0, 4.0, 6.0, 8.0, 10.0])

    def test_idempotent_on_grid(self):
        t = _uniform_series(10.0)
        v = np.sin(t)
        ts, vs = resample_uniform(t, v, rate=5.0)
        assert ts.shape == t.shape
        assert np.allclose(vs, v, atol=1e-9)

    def test_single_record_is_error(self):
        with pytest.raises(ValueError):
            resample_uniform([0.0], [1.0], rate=5.0)

    def test_no_extrapolation(self):
        ts, _ = resample_uniform([1.0, 2.1], [0.0, 1.0], rate=5.0)
        assert ts[0] == 1.0
        assert ts[-1] <= 2.1 + 1e-12


class TestMakeWindows:
    def test_count_10s_series(self):
        t = _uniform_series(10.0)
        wins = make_windows(t, np.zeros_like(t), CFG, flight_id="f")
        assert [w.start for w in wins] == [0.0, 2.5, 5.0]
        assert all(w.end - w.start == pytest.approx(5.0) for w in wins)
        assert all(len(w.values) == 25 for w in wins)

    def test_count_formula_random(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            n = int(rng.integers(2, 400))
            t = np.arange(n) / 5.0
            duration = t[-1]
            wins = make_windows(t, np.zeros_like(t), CFG)
            if duration >= CFG.window_length:
                expected = math.floor((duration - CFG.window_length)
                                      / (CFG.window_length - CFG.overlap)) + 1
            else:
                expected = 0
            assert len(wins) == expected, f"duration={duration}"

    def test_zero_centering(self):
        t = _uniform_series(5.0)
        raw = 10.0 * np.arange(t.size)
        wins = make_windows(t, raw, CFG)
        assert len(wins) == 1
        assert wins[0].values.sum() == pytest.approx(0.0, abs=1e-6)

    def test_constant_heading_gives_zero_window(self):
        t = _uniform_series(5.0)
        wins = make_windows(t, np.full(t.size, 90.0), CFG)
        assert np.allclose(wins[0].values, 0.0, atol=1e-12)

    def test_translation_invariance(self):
        rng = np.random.default_rng(3)
        t = _uniform_series(20.0)
        v = rng.normal(0, 30, size=t.size)
        base = make_windows(t, v, CFG)
        shifted = make_windows(t, v + 123.456, CFG)
        for a, b in zip(base, shifted):
            assert np.allclose(a.values, b.values, atol=1e-9)

    def test_short_series_empty(self):
        t = _uniform_series(4.0)
        assert make_windows(t, np.zeros_like(t), CFG) == []

    def test_distance_annotations(self):
        t = _uniform_series(10.0)
        trace = DistanceTrace(t, 10.0 - t)  # decreasing 10 -> 0
        wins = make_windows(t, np.zeros_like(t), CFG, distance_trace=trace)
        assert wins[0].win_dist == pytest.approx(5.0)   # min over [0, 5]
        assert wins[-1].win_dist == pytest.approx(0.0)  # min over [5, 10]
        assert all(w.min_dist == pytest.approx(0.0) for w in wins)

    def test_labels_copied(self):
        t = _uniform_series(5.0)
        lab = FlightLabels("f", "unsafe", "uncertain")
        wins = make_windows(t, np.zeros_like(t), CFG, labels=lab, flight_id="f")
        assert wins[0].safety == "unsafe" and wins[0].certainty == "uncertain"


class TestFilterNominal:
    def _windows(self, duration=60.0):
        t = _uniform_series(duration)
        return t, make_windows(t, np.zeros_like(t), CFG)

    def test_constant_far_distance_keeps_all(self):
        t, wins = self._windows()
        trace = DistanceTrace(t, np.full(t.size, 5.0))
        assert len(filter_nominal(wins, trace, CFG)) == len(wins)

    def test_dip_within_lookahead_excludes(self):
        t, wins = self._windows(120.0)
        w = wins[0]  # [0, 5]
        dip_t = w.end + 20.0
        d = np.full(t.size, 5.0)
        d[np.abs(t - dip_t) < 0.3] = 2.9
        excluded = filter_nominal(wins, DistanceTrace(t, d), CFG)
        assert w.index not in [x.index for x in excluded]

    def test_dip_beyond_lookahead_keeps(self):
        t, wins = self._windows(120.0)
        w = wins[0]
        dip_t = w.end + 60.0
        d = np.full(t.size, 5.0)
        d[np.abs(t - dip_t) < 0.3] = 2.9
        kept = filter_nominal([w], DistanceTrace(t, d), CFG)
        assert [x.index for x in kept] == [w.index]

    def test_monotone_in_threshold(self):
        rng = np.random.default_rng(8)
        t = _uniform_series(100.0)
        d = 3.0 + 2.0 * np.abs(np.sin(t / 7.0)) + rng.uniform(0, 0.5, t.size)
        wins = make_windows(t, np.zeros_like(t), CFG)
        trace = DistanceTrace(t, d)
        sizes = []
        for thresh in (2.0, 3.0, 4.0, 5.0):
            cfg = PreprocessConfig(nominal_distance=thresh)
            sizes.append(len(filter_nominal(wins, trace, cfg)))
        assert sizes == sorted(sizes, reverse=True)

    def test_no_trace_keeps_all(self):
        _, wins = self._windows()
        assert filter_nominal(wins, None, CFG) == list(wins)

    def test_window_based_filter_agrees_on_smooth_traces(self):
        # conservative window-derived filter matches the exact one away from
        # horizon-edge dips
        t = _uniform_series(200.0)
        d = 5.0 + 3.0 * np.sin(t / 20.0)  # dips to 2 periodically
        wins = make_windows(t, np.zeros_like(t), CFG, distance_trace=DistanceTrace(t, d),
                            flight_id="f")
        exact = {w.index for w in filter_nominal(wins, DistanceTrace(t, d), CFG)}
        approx = {w.index for w in filter_nominal_from_windows(wins, CFG)}
        assert approx <= exact
        # and differences only at the lookahead horizon edge
        for idx in exact - approx:
            assert any(abs(w.start - (wi.end + CFG.nominal_lookahead)) <= CFG.window_length
                       for w in wins for wi in wins if wi.index == idx)


class TestWindowsCsv:
    def test_round_trip(self):
        t = _uniform_series(10.0)
        rng = np.random.default_rng(0)
        trace = DistanceTrace(t, rng.uniform(1, 8, t.size))
        wins = make_windows(t, rng.normal(0, 20, t.size), CFG,
                            distance_trace=trace,
                            labels=FlightLabels("f1", "safe", "uncertain"),
                            flight_id="f1")
        buf = io.StringIO()
        write_windows_csv(wins, buf)
        again = read_windows_csv(io.StringIO(buf.getvalue()))
        assert len(again) == len(wins)
        for a, b in zip(wins, again):
            assert a.flight_id == b.flight_id and a.index == b.index
            assert a.start == b.start and a.end == b.end
            assert a.win_dist == b.win_dist and a.min_dist == b.min_dist
            assert a.safety == b.safety and a.certainty == b.certainty
            assert np.array_equal(a.values, b.values)

    def test_header_records_w(self):
        t = _uniform_series(5.0)
        wins = make_windows(t, np.zeros_like(t), CFG)
        buf = io.StringIO()
        write_windows_csv(wins, buf)
        header = buf.getvalue().splitlines()[0].split(",")
        assert header[8:] == [f"v{k}" for k in range(25)]

    def test_infinite_distances_round_trip(self):
        w = HeadingWindow("f", 0, 0.0, 5.0, np.zeros(25))
        buf = io.StringIO()
        write_windows_csv([w], buf)
        again = read_windows_csv(io.StringIO(buf.getvalue()))
        assert math.isinf(again[0].win_dist) and math.isinf(again[0].min_dist)

    def test_empty_needs_window_samples(self):
        buf = io.StringIO()
        with pytest.raises(ValueError):
            write_windows_csv([], buf)
        write_windows_csv([], buf, window_samples=25)
        assert read_windows_csv(io.StringIO(buf.getvalue())) == []


class TestAttachLabels:
    def test_attach(self):
        w = HeadingWindow("f1", 0, 0.0, 5.0, np.zeros(25))
        out = attach_labels([w], {"f1": FlightLabels("f1", "unsafe", "certain")})
        assert out[0].safety == "unsafe" and out[0].certainty == "certain"
        out2 = attach_labels([w], {})
        assert out2[0].safety is None


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            PreprocessConfig(overlap=5.0)  # overlap == window_length
        with pytest.raises(ValueError):
            PreprocessConfig(overlap=0.0)
        with pytest.raises(ValueError):
            PreprocessConfig(sample_rate=0.5)  # W = 2.5 not integral
        assert PreprocessConfig().window_samples == 25
        assert PreprocessConfig(sample_rate=4.0, window_length=2.0, overlap=1.0) \
            .window_samples == 8
