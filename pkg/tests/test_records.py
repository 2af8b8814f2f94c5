import json

import pytest
from hypothesis import given, strategies as st

from yearclip.errors import DuplicateId, FieldOutOfRange, ValidationError, YearOutOfRange
from yearclip.records import (
    DEFAULT_PERIODS,
    ROOF_BANK,
    BuildingRecord,
    Continent,
    Reason,
    ReasonBank,
    Renovation,
    Split,
    Subcategory,
    check_periods,
    dump_manifest,
    midpoints,
    period_of_year,
    read_manifest,
    validate_manifest,
)


def rec(rid="Q1", **kw):
    base = dict(id=rid, year=1900, continent=Continent.EUROPE, pageviews=10)
    base.update(kw)
    return BuildingRecord(**base)


class TestPeriodOfYear:
    @pytest.mark.parametrize("year,expected", [(800, 0), (1150, 1), (1275, 1), (1949, 5), (1950, 6), (2024, 6)])
    def test_examples(self, year, expected):
        assert period_of_year(year) == expected

    @pytest.mark.parametrize("year", [799, 2025, 500])
    def test_out_of_range(self, year):
        with pytest.raises(YearOutOfRange):
            period_of_year(year)

    def test_start_of_each_period_maps_to_it(self):
        for i, p in enumerate(DEFAULT_PERIODS):
            assert period_of_year(p.start) == i

    @given(st.integers(800, 2024))
    def test_total_and_unique(self, year):
        idx = period_of_year(year)
        containing = [i for i, p in enumerate(DEFAULT_PERIODS)
                      if p.start <= year < p.end or (i == 6 and year == p.end)]
        assert containing == [idx]


def test_default_table():
    assert len(DEFAULT_PERIODS) == 7
    check_periods(DEFAULT_PERIODS)
    assert midpoints() == [975, 1275, 1500, 1675, 1800, 1900, 1987]
    assert [p.name for p in DEFAULT_PERIODS] == [
        "Roman", "Gothic", "Renaissance", "Baroque", "Neoclassical", "Modern", "Contemporary"]


class TestReasonBank:
    def test_roof_bank(self):
        assert ROOF_BANK.n_subcategories == 7
        assert ROOF_BANK.keys()[0] == "roof:spire"
        assert [s.label for s in ROOF_BANK.reasons[0].subcategories][-1] == "butterfly roof"

    def test_needs_two_subcategories(self):
        with pytest.raises(ValidationError):
            ReasonBank((Reason("wall", (Subcategory("brick", "brick"),)),))

    def test_unique_labels(self):
        with pytest.raises(ValidationError):
            ReasonBank((Reason("wall", (Subcategory("brick", "a"), Subcategory("brick", "b"))),))

    def test_json_round_trip(self):
        assert ReasonBank.from_json(ROOF_BANK.to_json()) == ROOF_BANK


class TestValidateManifest:
    def test_duplicate_id(self):
        with pytest.raises(DuplicateId) as exc:
            validate_manifest([rec("Q1"), rec("Q1")])
        assert exc.value.record_id == "Q1"

    def test_lat_out_of_range(self):
        with pytest.raises(FieldOutOfRange) as exc:
            validate_manifest([rec(lat=95.0, lon=0.0)])
        assert exc.value.field == "lat"

    def test_valid_list(self):
        summary = validate_manifest([rec("a"), rec("b", lat=1.0, lon=2.0), rec("c")])
        assert summary.n_ok == 3 and summary.errors == []
        assert summary.n_missing_gps == 2

    def test_non_strict_collects_everything(self):
        summary = validate_manifest([rec("a", year=3000), rec("a", pageviews=-1)], strict=False)
        kinds = [type(e).__name__ for e in summary.errors]
        assert kinds == ["FieldOutOfRange", "DuplicateId", "FieldOutOfRange"]
        assert all(e.record_id == "a" for e in summary.errors)


def test_manifest_round_trip(tmp_path):
    recs = [rec("a", lat=10.5, lon=-3.25, density=120.0, renovation=Renovation.REBUILT, split=Split.TEST),
            rec("b", continent=Continent.ASIA)]
    path = tmp_path / "m.jsonl"
    path.write_text(dump_manifest(recs), encoding="utf-8")
    assert read_manifest(path) == recs
    first = json.loads(path.read_text().splitlines()[0])
    assert list(first) == ["id", "year", "lat", "lon", "continent", "pageviews", "density", "renovation", "split"]


def test_bad_continent_rejected():
    with pytest.raises(FieldOutOfRange):
        BuildingRecord.from_json({"id": "x", "year": 1900, "continent": "Atlantis"})
