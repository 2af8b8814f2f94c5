"""Metrics, stratified breakdowns, the decade x continent split and report export.

All bins are right-open with the top edge joining the last bin. Sums run
sequentially in 64-bit over records sorted by id, so reported values do not
depend on input order.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import math
import statistics
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

from .errors import EmptyInput, LengthMismatch, UnknownId, ValidationError, YearOutOfRange
from .records import (
    DEFAULT_PERIODS,
    BuildingRecord,
    Continent,
    Renovation,
    Split,
    StylePeriod,
    period_of_year,
)
from .utils import rng_for

IA_THRESHOLDS = (5, 20, 50, 100)
POPULARITY_EDGES = (100, 1_000, 10_000, 100_000)
POPULARITY_LABELS = ("<10^2", "10^2-10^3", "10^3-10^4", "10^4-10^5", ">10^5")
ANALYSIS_PERIOD_EDGES = (1000, 1150, 1400, 1600, 1800, 1900, 1950, 2024)
ANALYSIS_PERIOD_LABELS = tuple(f"{a}-{b}" for a, b in zip(ANALYSIS_PERIOD_EDGES, ANALYSIS_PERIOD_EDGES[1:]))
DENSITY_CLASSES = ("Rural", "SemiUrban", "Urban")
RENOVATION_CLASSES = (Renovation.NEVER, Renovation.RENOVATED, Renovation.REBUILT)
CONTINENTS = tuple(c.value for c in Continent)


def _check_pair(pred: Sequence, gt: Sequence) -> None:
    if len(pred) != len(gt):
        raise LengthMismatch(f"{len(pred)} predictions vs {len(gt)} ground-truth values")
    if len(pred) == 0:
        raise EmptyInput("no predictions")


def mae(pred: Sequence[float], gt: Sequence[float]) -> float:
    _check_pair(pred, gt)
    total = 0.0
    for p, y in zip(pred, gt):
        total += abs(float(y) - float(p))
    return total / len(pred)


def interval_accuracy(pred: Sequence[float], gt: Sequence[float], k: float) -> float:
    """Percentage of predictions with |y - y_hat| <= k."""
    _check_pair(pred, gt)
    if k < 0:
        raise ValueError("k must be >= 0")
    hits = sum(1 for p, y in zip(pred, gt) if abs(float(y) - float(p)) <= k)
    return 100.0 * hits / len(pred)


def popularity_bin(pageviews: int) -> int:
    if pageviews < 0:
        raise ValueError("pageviews must be >= 0")
    for i, edge in enumerate(POPULARITY_EDGES):
        if pageviews < edge:
            return i
    return len(POPULARITY_EDGES)


def popularity_gain(hits: Sequence[bool], bins: Sequence[int]) -> Optional[float]:
    """IA5 of the top popularity bin minus IA5 of the bottom one; ``None`` if either is empty."""
    if len(hits) != len(bins):
        raise LengthMismatch("hits and bins differ in length")
    lo = [h for h, b in zip(hits, bins) if b == 0]
    hi = [h for h, b in zip(hits, bins) if b == len(POPULARITY_EDGES)]
    if not lo or not hi:
        return None
    return 100.0 * sum(hi) / len(hi) - 100.0 * sum(lo) / len(lo)


def analysis_period_bin(year: float) -> int:
    lo, hi = ANALYSIS_PERIOD_EDGES[0], ANALYSIS_PERIOD_EDGES[-1]
    if not (lo <= year <= hi):
        raise YearOutOfRange(year, lo, hi)
    for i, edge in enumerate(ANALYSIS_PERIOD_EDGES[1:]):
        if year < edge:
            return i
    return len(ANALYSIS_PERIOD_LABELS) - 1


def density_class(people_per_km2: float) -> str:
    if people_per_km2 < 0:
        raise ValueError("density must be >= 0")
    if people_per_km2 < 300:
        return "Rural"
    if people_per_km2 <= 1500:
        return "SemiUrban"
    return "Urban"


def cls_accuracy(pred_periods: Sequence[int], gt_years: Sequence[float],
                 periods: Sequence[StylePeriod] = DEFAULT_PERIODS) -> float:
    _check_pair(pred_periods, gt_years)
    correct = sum(1 for p, y in zip(pred_periods, gt_years) if int(p) == period_of_year(y, periods))
    return 100.0 * correct / len(pred_periods)


def decade(year: int) -> int:
    return (year // 10) * 10


def largest_remainder(n: int, ratios: Sequence[float]) -> list[int]:
    """Integer quotas summing to ``n``; leftover units go to the largest fractional parts, lowest index first on ties."""
    exact = [n * r for r in ratios]
    counts = [math.floor(x) for x in exact]
    order = sorted(range(len(ratios)), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return counts


def stratified_split(records: Sequence[BuildingRecord], ratios: Sequence[float] = (0.6, 0.2, 0.2),
                     seed: int = 0) -> list[BuildingRecord]:
    """Tag every record Train/Val/Test, stratified by (decade, continent).

    Each stratum is sorted by id, shuffled by a generator seeded from
    ``seed``, then cut into contiguous blocks. Output keeps input order.
    """
    if len(ratios) != 3 or any(r < 0 for r in ratios) or not math.isclose(sum(ratios), 1.0, abs_tol=1e-9):
        raise ValidationError(f"ratios must be three non-negative values summing to 1, got {ratios!r}")
    strata: dict[tuple[int, str], list[BuildingRecord]] = {}
    for r in records:
        strata.setdefault((decade(r.year), r.continent.value), []).append(r)
    rng = rng_for(seed, "split")
    assigned: dict[str, Split] = {}
    for key in sorted(strata):
        members = sorted(strata[key], key=lambda r: r.id)
        perm = rng.permutation(len(members))
        counts = largest_remainder(len(members), ratios)
        tags = [Split.TRAIN] * counts[0] + [Split.VAL] * counts[1] + [Split.TEST] * counts[2]
        for tag, idx in zip(tags, perm):
            assigned[members[idx].id] = tag
    return [dataclasses.replace(r, split=assigned[r.id]) for r in records]


@dataclass
class Cell:
    n: int = 0
    abs_err: float = 0.0
    hits5: int = 0

    def add(self, err: float) -> None:
        self.n += 1
        self.abs_err += err
        if err <= 5:
            self.hits5 += 1

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "mae": self.abs_err / self.n if self.n else None,
            "ia5": 100.0 * self.hits5 / self.n if self.n else None,
        }


@dataclass
class EvalReport:
    n: int
    mae: float
    ia: dict[int, float]
    cls_acc: float
    popularity: list[Cell]
    gain: Optional[float]
    by_continent: dict[str, Cell]
    by_period: list[Cell]
    by_density: dict[str, Cell]
    by_renovation: dict[str, Cell]
    excluded: dict[str, int] = field(default_factory=dict)
    seed: Optional[int] = None

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "seed": self.seed,
            "mae": self.mae,
            "ia": {str(k): v for k, v in self.ia.items()},
            "cls_acc": self.cls_acc,
            "popularity": {
                "bins": [dict(label=lab, **c.to_json()) for lab, c in zip(POPULARITY_LABELS, self.popularity)],
                "gain": self.gain,
            },
            "by_continent": {k: c.to_json() for k, c in self.by_continent.items()},
            "by_period": [dict(label=lab, **c.to_json()) for lab, c in zip(ANALYSIS_PERIOD_LABELS, self.by_period)],
            "by_density": {k: c.to_json() for k, c in self.by_density.items()},
            "by_renovation": {k: c.to_json() for k, c in self.by_renovation.items()},
            "excluded": dict(self.excluded),
        }


@dataclass(frozen=True)
class ScoredPrediction:
    id: str
    year_hat: float
    coarse_period: Optional[int] = None


def _coarse_from_year(year_hat: float, periods: Sequence[StylePeriod]) -> int:
    clamped = min(max(year_hat, periods[0].start), periods[-1].end)
    return period_of_year(clamped, periods)


def _join(predictions: Iterable[ScoredPrediction], records: Sequence[BuildingRecord]):
    by_id = {r.id: r for r in records}
    seen = set()
    rows = []
    for p in predictions:
        if p.id not in by_id:
            raise UnknownId(p.id)
        if p.id in seen:
            raise ValidationError(f"duplicate prediction for id {p.id!r}")
        seen.add(p.id)
        rows.append((p, by_id[p.id]))
    if not rows:
        raise EmptyInput("no predictions to evaluate")
    rows.sort(key=lambda t: t[0].id)
    return rows


def evaluate(predictions: Iterable[ScoredPrediction], records: Sequence[BuildingRecord],
             periods: Sequence[StylePeriod] = DEFAULT_PERIODS, seed: Optional[int] = None) -> EvalReport:
    rows = _join(predictions, records)
    n = len(rows)
    total = 0.0
    ia_hits = {k: 0 for k in IA_THRESHOLDS}
    correct = 0
    popularity = [Cell() for _ in POPULARITY_LABELS]
    by_continent = {c: Cell() for c in CONTINENTS}
    by_period = [Cell() for _ in ANALYSIS_PERIOD_LABELS]
    by_density = {c: Cell() for c in DENSITY_CLASSES}
    by_renovation = {c.value: Cell() for c in RENOVATION_CLASSES}
    excluded = {"period": 0, "density": 0, "renovation": 0}
    for pred, rec in rows:
        err = abs(float(rec.year) - float(pred.year_hat))
        total += err
        for k in IA_THRESHOLDS:
            if err <= k:
                ia_hits[k] += 1
        coarse = pred.coarse_period if pred.coarse_period is not None else _coarse_from_year(pred.year_hat, periods)
        if coarse == period_of_year(rec.year, periods):
            correct += 1
        popularity[popularity_bin(rec.pageviews)].add(err)
        by_continent[rec.continent.value].add(err)
        if ANALYSIS_PERIOD_EDGES[0] <= rec.year <= ANALYSIS_PERIOD_EDGES[-1]:
            by_period[analysis_period_bin(rec.year)].add(err)
        else:
            excluded["period"] += 1
        if rec.density is not None:
            by_density[density_class(rec.density)].add(err)
        else:
            excluded["density"] += 1
        if rec.renovation in RENOVATION_CLASSES:
            by_renovation[rec.renovation.value].add(err)
        else:
            excluded["renovation"] += 1
    lo, hi = popularity[0], popularity[-1]
    gain = (100.0 * hi.hits5 / hi.n - 100.0 * lo.hits5 / lo.n) if lo.n and hi.n else None
    return EvalReport(
        n=n,
        mae=total / n,
        ia={k: 100.0 * h / n for k, h in ia_hits.items()},
        cls_acc=100.0 * correct / n,
        popularity=popularity,
        gain=gain,
        by_continent=by_continent,
        by_period=by_period,
        by_density=by_density,
        by_renovation=by_renovation,
        excluded=excluded,
        seed=seed,
    )


def scatter_csv(predictions: Iterable[ScoredPrediction], records: Sequence[BuildingRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["id", "pred_year", "gt_year"])
    for pred, rec in _join(predictions, records):
        writer.writerow([pred.id, repr(float(pred.year_hat)), rec.year])
    return buf.getvalue()


def scatter_export(predictions: Iterable[ScoredPrediction], records: Sequence[BuildingRecord], path) -> None:
    from .utils import write_text_atomic

    write_text_atomic(path, scatter_csv(predictions, records))


# --- text rendering -------------------------------------------------------


def _fmt(values: Sequence[Optional[float]]) -> str:
    vals = [v for v in values if v is not None]
    if not vals:
        return "-"
    mean = statistics.fmean(vals)
    if len(vals) == 1:
        return f"{mean:.2f}"
    return f"{mean:.2f} ± {statistics.stdev(vals):.2f}"


def _table(title: str, header: Sequence[str], row: Sequence[str]) -> str:
    widths = [max(len(h), len(c)) for h, c in zip(header, row)]
    line = lambda cells: "  ".join(c.rjust(w) for c, w in zip(cells, widths))
    return "\n".join([title, line(header), line(["-" * w for w in widths]), line(row)])


def render_reports(reports: Sequence[Mapping]) -> str:
    """Aligned-column tables for one report, or mean ± sample std over several runs."""
    if not reports:
        raise EmptyInput("no reports to render")

    def col(getter):
        return _fmt([getter(r) for r in reports])

    n_note = f"runs: {len(reports)}, records per run: {', '.join(str(r['n']) for r in reports)}"
    basic = _table(
        "Basic / interval accuracy / popularity (IA5)",
        ["MAE", "IA5", "IA20", "IA50", "IA100", "CLS Acc"] + list(POPULARITY_LABELS) + ["Gain"],
        [col(lambda r: r["mae"])]
        + [col(lambda r, k=k: r["ia"][str(k)]) for k in IA_THRESHOLDS]
        + [col(lambda r: r["cls_acc"])]
        + [col(lambda r, i=i: r["popularity"]["bins"][i]["ia5"]) for i in range(len(POPULARITY_LABELS))]
        + [col(lambda r: r["popularity"]["gain"])],
    )
    region = _table(
        "MAE by continent and period",
        list(CONTINENTS) + list(ANALYSIS_PERIOD_LABELS),
        [col(lambda r, c=c: r["by_continent"][c]["mae"]) for c in CONTINENTS]
        + [col(lambda r, i=i: r["by_period"][i]["mae"]) for i in range(len(ANALYSIS_PERIOD_LABELS))],
    )
    density = _table(
        "MAE by density and renovation",
        list(DENSITY_CLASSES) + [c.value for c in RENOVATION_CLASSES],
        [col(lambda r, c=c: r["by_density"][c]["mae"]) for c in DENSITY_CLASSES]
        + [col(lambda r, c=c: r["by_renovation"][c.value]["mae"]) for c in RENOVATION_CLASSES],
    )
    return "\n\n".join([n_note, basic, region, density]) + "\n"
