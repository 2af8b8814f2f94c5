"""Building records, the style-period taxonomy and the reason bank."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

from .errors import DuplicateId, FieldOutOfRange, ValidationError, YearOutOfRange

YEAR_MIN = 800
YEAR_MAX = 2100


class Continent(str, enum.Enum):
    AFRICA = "Africa"
    AMERICAS = "Americas"
    ASIA = "Asia"
    AUSTRALIA = "Australia"
    EUROPE = "Europe"


class Renovation(str, enum.Enum):
    NEVER = "Never"
    RENOVATED = "Renovated"
    REBUILT = "Rebuilt"
    UNKNOWN = "Unknown"


class Split(str, enum.Enum):
    TRAIN = "Train"
    VAL = "Val"
    TEST = "Test"


@dataclass(frozen=True)
class BuildingRecord:
    """One building. Field ranges are checked by :func:`validate_manifest`."""

    id: str
    year: int
    continent: Continent
    pageviews: int = 0
    lat: Optional[float] = None
    lon: Optional[float] = None
    density: Optional[float] = None
    renovation: Renovation = Renovation.UNKNOWN
    split: Optional[Split] = None

    @property
    def gps(self) -> Optional[tuple[float, float]]:
        if self.lat is None or self.lon is None:
            return None
        return (self.lat, self.lon)

    def to_json(self) -> dict:
        out: dict = {"id": self.id, "year": self.year}
        if self.lat is not None and self.lon is not None:
            out["lat"] = self.lat
            out["lon"] = self.lon
        out["continent"] = self.continent.value
        out["pageviews"] = self.pageviews
        if self.density is not None:
            out["density"] = self.density
        out["renovation"] = self.renovation.value
        if self.split is not None:
            out["split"] = self.split.value
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "BuildingRecord":
        try:
            rid = obj["id"]
            year = obj["year"]
            continent = Continent(obj["continent"])
        except KeyError as exc:
            raise ValidationError(f"manifest record missing field {exc.args[0]!r}: {obj!r}") from None
        except ValueError:
            raise FieldOutOfRange(str(obj.get("id")), "continent", obj.get("continent")) from None
        try:
            renovation = Renovation(obj.get("renovation") or "Unknown")
        except ValueError:
            raise FieldOutOfRange(rid, "renovation", obj.get("renovation")) from None
        split = obj.get("split")
        try:
            split = Split(split) if split is not None else None
        except ValueError:
            raise FieldOutOfRange(rid, "split", split) from None
        if isinstance(year, float) and year.is_integer():
            year = int(year)
        if not isinstance(year, int) or isinstance(year, bool):
            raise FieldOutOfRange(rid, "year", year)
        return cls(
            id=rid,
            year=year,
            continent=continent,
            pageviews=obj.get("pageviews", 0),
            lat=obj.get("lat"),
            lon=obj.get("lon"),
            density=obj.get("density"),
            renovation=renovation,
            split=split,
        )


@dataclass(frozen=True)
class StylePeriod:
    name: str
    start: int
    end: int

    @property
    def midpoint(self) -> float:
        return (self.start + self.end) / 2


# Contemporary is pinned to 2024, the newest year in the corpus.
DEFAULT_PERIODS: tuple[StylePeriod, ...] = (
    StylePeriod("Roman", 800, 1150),
    StylePeriod("Gothic", 1150, 1400),
    StylePeriod("Renaissance", 1400, 1600),
    StylePeriod("Baroque", 1600, 1750),
    StylePeriod("Neoclassical", 1750, 1850),
    StylePeriod("Modern", 1850, 1950),
    StylePeriod("Contemporary", 1950, 2024),
)


def check_periods(periods: Iterable[StylePeriod]) -> None:
    periods = list(periods)
    if not periods:
        raise ValidationError("empty period table")
    for a, b in zip(periods, periods[1:]):
        if a.end != b.start:
            raise ValidationError(f"periods {a.name} and {b.name} are not contiguous")
    for p in periods:
        if p.end <= p.start:
            raise ValidationError(f"period {p.name} has end <= start")


def midpoints(periods: Iterable[StylePeriod] = DEFAULT_PERIODS) -> list[float]:
    return [p.midpoint for p in periods]


def period_of_year(year: float, periods: Iterable[StylePeriod] = DEFAULT_PERIODS) -> int:
    """Index of the right-open period containing ``year``.

    The final period also owns its end year, so 2024 is Contemporary.
    """
    periods = tuple(periods)
    lo, hi = periods[0].start, periods[-1].end
    if not (lo <= year <= hi):
        raise YearOutOfRange(year, lo, hi)
    for i, p in enumerate(periods):
        if p.start <= year < p.end:
            return i
    return len(periods) - 1


@dataclass(frozen=True)
class Subcategory:
    label: str
    prompt_text: str


@dataclass(frozen=True)
class Reason:
    name: str
    subcategories: tuple[Subcategory, ...]


@dataclass(frozen=True)
class ReasonBank:
    reasons: tuple[Reason, ...]

    def __post_init__(self):
        if not self.reasons:
            raise ValidationError("reason bank needs at least one reason")
        names = [r.name for r in self.reasons]
        if len(set(names)) != len(names):
            raise ValidationError("reason names must be unique")
        for r in self.reasons:
            if len(r.subcategories) < 2:
                raise ValidationError(f"reason {r.name!r} needs at least two subcategories")
            labels = [s.label for s in r.subcategories]
            if len(set(labels)) != len(labels):
                raise ValidationError(f"reason {r.name!r} has duplicate subcategory labels")

    @property
    def n_subcategories(self) -> int:
        return sum(len(r.subcategories) for r in self.reasons)

    def keys(self) -> list[str]:
        """Embedding ids in s-vector order, ``"reason:label"``."""
        return [f"{r.name}:{s.label}" for r in self.reasons for s in r.subcategories]

    def slices(self) -> list[slice]:
        out, pos = [], 0
        for r in self.reasons:
            out.append(slice(pos, pos + len(r.subcategories)))
            pos += len(r.subcategories)
        return out

    def to_json(self) -> dict:
        return {
            "reasons": [
                {
                    "name": r.name,
                    "subcategories": [
                        {"label": s.label, "prompt_text": s.prompt_text} for s in r.subcategories
                    ],
                }
                for r in self.reasons
            ]
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ReasonBank":
        return cls(
            tuple(
                Reason(
                    r["name"],
                    tuple(Subcategory(s["label"], s.get("prompt_text", s["label"])) for s in r["subcategories"]),
                )
                for r in obj["reasons"]
            )
        )


ROOF_BANK = ReasonBank(
    (
        Reason(
            "roof",
            (
                Subcategory("spire", "A sharply pointed roof emphasizing verticality and ornate detailing."),
                Subcategory("dome", "A smoothly curved roof suggesting grandeur and centrality."),
                Subcategory(
                    "flat roof",
                    "A completely horizontal surface with an unobstructed and minimalist design.",
                ),
                Subcategory(
                    "sloped roof",
                    "A roof with a noticeable and functional inclination for water drainage "
                    "and dynamic appearance.",
                ),
                Subcategory(
                    "gabled roof",
                    "A traditional peaked roof with a triangular profile that exudes symmetry.",
                ),
                Subcategory(
                    "mansard roof",
                    "A dual-pitched roof offering both elegance and additional living space.",
                ),
                Subcategory(
                    "butterfly roof",
                    "An inverted roof design that creates a V-shaped, modern, and unconventional look.",
                ),
            ),
        ),
    )
)


@dataclass
class ValidationSummary:
    n_records: int = 0
    n_ok: int = 0
    n_missing_gps: int = 0
    n_missing_density: int = 0
    n_unknown_renovation: int = 0
    errors: list[ValidationError] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors


def _record_errors(rec: BuildingRecord) -> list[ValidationError]:
    errs: list[ValidationError] = []
    rid = rec.id
    if not isinstance(rid, str) or not rid:
        errs.append(FieldOutOfRange(str(rid), "id", rid))
    if not (YEAR_MIN <= rec.year <= YEAR_MAX):
        errs.append(FieldOutOfRange(rid, "year", rec.year))
    if (rec.lat is None) != (rec.lon is None):
        errs.append(FieldOutOfRange(rid, "lat/lon", (rec.lat, rec.lon)))
    if rec.lat is not None and not (math.isfinite(rec.lat) and -90 <= rec.lat <= 90):
        errs.append(FieldOutOfRange(rid, "lat", rec.lat))
    if rec.lon is not None and not (math.isfinite(rec.lon) and -180 <= rec.lon <= 180):
        errs.append(FieldOutOfRange(rid, "lon", rec.lon))
    if not isinstance(rec.pageviews, int) or rec.pageviews < 0:
        errs.append(FieldOutOfRange(rid, "pageviews", rec.pageviews))
    if rec.density is not None and not (math.isfinite(rec.density) and rec.density >= 0):
        errs.append(FieldOutOfRange(rid, "density", rec.density))
    return errs


def validate_manifest(records: Iterable[BuildingRecord], strict: bool = True) -> ValidationSummary:
    """Check ids and field ranges.

    With ``strict`` the first problem is raised; otherwise every problem is
    collected on the returned summary.
    """
    summary = ValidationSummary()
    seen: set[str] = set()
    for rec in records:
        summary.n_records += 1
        errs = _record_errors(rec)
        if rec.id in seen:
            errs.insert(0, DuplicateId(rec.id))
        seen.add(rec.id)
        if errs:
            if strict:
                raise errs[0]
            summary.errors.extend(errs)
        else:
            summary.n_ok += 1
        if rec.gps is None:
            summary.n_missing_gps += 1
        if rec.density is None:
            summary.n_missing_density += 1
        if rec.renovation is Renovation.UNKNOWN:
            summary.n_unknown_renovation += 1
    return summary


def read_manifest(path: str | Path) -> list[BuildingRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from None
            records.append(BuildingRecord.from_json(obj))
    return records


def dump_manifest(records: Iterable[BuildingRecord]) -> str:
    return "".join(json.dumps(r.to_json(), ensure_ascii=False) + "\n" for r in records)


def read_reason_bank(path: str | Path) -> ReasonBank:
    with open(path, encoding="utf-8") as fh:
        return ReasonBank.from_json(json.load(fh))
