import io

import pytest

from flightwatch.flightdata import (
    FlightLabels,
    FlightLog,
    LogRecord,
    ObstacleBox,
    ParseError,
    ValidationError,
    parse_flight_log,
    parse_labels,
    parse_obstacles,
    serialize_flight_log,
    write_labels,
)

HEADER = "timestamp_s,channel,x,y,z,r_deg\n"


def _parse(body: str, **kw):
    kw.setdefault("flight_id", "f1")
    return parse_flight_log(io.StringIO(HEADER + body), **kw)


class TestParseFlightLog:
    def test_single_safe_row(self):
        log = _parse("0.0,safe,1.0,2.0,3.0,90.0\n")
        recs = log.channel("safe")
        assert len(recs) == 1
        assert recs[0] == LogRecord(0.0, "safe", 1.0, 2.0, 3.0, 90.0)

    def test_heading_out_of_raw_range(self):
        with pytest.raises(ValidationError):
            _parse("0.0,safe,1.0,2.0,3.0,200.0\n")

    def test_non_monotone_timestamps(self):
        body = ("0.0,safe,0,0,0,0\n"
                "0.2,safe,0,0,0,0\n"
                "0.1,safe,0,0,0,0\n")
        with pytest.raises(ValidationError, match="non-monotone"):
            _parse(body)

    def test_empty_safe_channel(self):
        with pytest.raises(ValidationError, match="safe channel"):
            _parse("0.0,position,0,0,0,0\n")

    def test_malformed_row_reports_line_number(self):
        with pytest.raises(ParseError, match="line 3"):
            _parse("0.0,safe,0,0,0,0\n0.1,safe,0,0,bogus,0\n")

    def test_bad_header(self):
        with pytest.raises(ParseError, match="header"):
            parse_flight_log(io.StringIO("a,b,c\n"), flight_id="f1")

    def test_negative_timestamp(self):
        with pytest.raises(ValidationError):
            _parse("-1.0,safe,0,0,0,0\n")

    def test_unknown_channel(self):
        with pytest.raises(ValidationError, match="channel"):
            _parse("0.0,wind,0,0,0,0\n")

    def test_boundary_headings_accepted(self):
        log = _parse("0.0,safe,0,0,0,-180.0\n1.0,safe,0,0,0,180.0\n")
        assert [r.r for r in log.channel("safe")] == [-180.0, 180.0]

    def test_channels_independent_timelines(self):
        # same timestamps on different channels are fine
        log = _parse("0.0,safe,0,0,0,0\n0.0,position,1,1,1,0\n"
                     "0.2,safe,0,0,0,1\n0.2,position,1,1,1,1\n")
        assert len(log.channel("safe")) == 2
        assert len(log.channel("position")) == 2
        assert len(log.channel("desired")) == 0


class TestRoundTrip:
    def test_serialize_parse_identity(self):
        body = ("0.0,safe,1.5,-2.25,3.125,90.5\n"
                "0.1,position,0.1,0.2,0.3,-179.9\n"
                "0.2,safe,1.0,2.0,3.0,12.3456789\n")
        log = _parse(body)
        again = parse_flight_log(io.StringIO(serialize_flight_log(log)), flight_id="f1")
        assert again.records == log.records

    def test_channel_partition(self):
        body = "".join(f"{t / 10},{ch},0,0,0,{t}\n"
                       for t in range(5) for ch in ("desired", "safe", "position"))
        log = _parse(body)
        total = sum(len(log.channel(ch)) for ch in ("desired", "safe", "position"))
        assert total == len(log.records) == 15


class TestObstacles:
    def test_single_box(self):
        doc = '[{"cx":0,"cy":0,"length":2,"width":1,"height":10,"rotation":0}]'
        boxes = parse_obstacles(io.StringIO(doc))
        assert boxes == [ObstacleBox(0.0, 0.0, 2.0, 1.0, 10.0, 0.0)]

    def test_empty_list(self):
        assert parse_obstacles(io.StringIO("[]")) == []

    def test_negative_dimension(self):
        doc = '[{"cx":0,"cy":0,"length":2,"width":-1,"height":10,"rotation":0}]'
        with pytest.raises(ValidationError):
            parse_obstacles(io.StringIO(doc))

    def test_malformed_document(self):
        with pytest.raises(ParseError):
            parse_obstacles(io.StringIO("{not json"))

    def test_missing_key(self):
        with pytest.raises(ParseError, match="missing key"):
            parse_obstacles(io.StringIO('[{"cx":0}]'))


class TestLabels:
    def test_basic(self):
        labels = parse_labels(io.StringIO(
            "flight_id,safety,certainty\nf1,unsafe,uncertain\n"))
        assert labels == {"f1": FlightLabels("f1", "unsafe", "uncertain")}

    def test_duplicate_flight_id(self):
        doc = "flight_id,safety,certainty\nf1,safe,certain\nf1,unsafe,uncertain\n"
        with pytest.raises(ValidationError, match="duplicate"):
            parse_labels(io.StringIO(doc))

    def test_unknown_token(self):
        doc = "flight_id,safety,certainty\nf1,risky,certain\n"
        with pytest.raises(ValidationError):
            parse_labels(io.StringIO(doc))

    def test_write_read_round_trip(self, tmp_path):
        labels = {"a": FlightLabels("a", "safe", "certain"),
                  "b": FlightLabels("b", "unsafe", "uncertain")}
        path = tmp_path / "labels.csv"
        write_labels(labels, path)
        assert parse_labels(path) == labels


class TestFlightLogInvariants:
    def test_negative_execution_index(self):
        rec = LogRecord(0.0, "safe", 0, 0, 0, 0)
        with pytest.raises(ValidationError):
            FlightLog(flight_id="x", records=(rec,), execution_index=-1)

    def test_identity_passthrough(self):
        log = _parse("0.0,safe,0,0,0,0\n", test_id="t9", execution_index=3)
        assert (log.flight_id, log.test_id, log.execution_index) == ("f1", "t9", 3)
