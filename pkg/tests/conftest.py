import numpy as np
import pytest

from yearclip.model import PromptSet
from yearclip.records import DEFAULT_PERIODS, ROOF_BANK, BuildingRecord, Continent, Renovation


def naive_matvec(weight, bias, x):
    """Triple-loop style reference for weight @ x + bias."""
    out = []
    for i in range(len(weight)):
        acc = 0.0
        for j in range(len(x)):
            acc += float(weight[i][j]) * float(x[j])
        out.append(acc + float(bias[i]))
    return np.array(out)


def naive_cos(a, b):
    dot = sum(float(x) * float(y) for x, y in zip(a, b))
    na = sum(float(x) ** 2 for x in a) ** 0.5
    nb = sum(float(y) ** 2 for y in b) ** 0.5
    return dot / (na * nb)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def prompts(rng):
    return PromptSet(rng.normal(size=(7, 8)), rng.normal(size=(ROOF_BANK.n_subcategories, 8)),
                     ROOF_BANK, DEFAULT_PERIODS)


def random_records(rng, n, with_split=False):
    continents = list(Continent)
    renovations = list(Renovation)
    recs = []
    for i in range(n):
        has_gps = rng.random() < 0.8
        has_density = rng.random() < 0.7
        recs.append(BuildingRecord(
            id=f"Q{i:05d}",
            year=int(rng.integers(1001, 2025)),
            continent=continents[int(rng.integers(len(continents)))],
            pageviews=int(10 ** rng.uniform(0, 6.5)),
            lat=float(rng.uniform(-90, 90)) if has_gps else None,
            lon=float(rng.uniform(-180, 180)) if has_gps else None,
            density=float(rng.uniform(0, 4000)) if has_density else None,
            renovation=renovations[int(rng.integers(len(renovations)))],
        ))
    return recs


def brute_force_report(preds, records):
    """Independent group-by recomputation of an evaluation report.

    Bins are spelled out as literal tables; sums run over ids in sorted order
    so the floats match the library bit for bit.
    """
    by_id = {r.id: r for r in records}
    pops = [(0, 100), (100, 1000), (1000, 10000), (10000, 100000), (100000, float("inf"))]
    eras = [(1000, 1150), (1150, 1400), (1400, 1600), (1600, 1800), (1800, 1900), (1900, 1950), (1950, 2025)]
    styles = [(800, 1150), (1150, 1400), (1400, 1600), (1600, 1750), (1750, 1850), (1850, 1950), (1950, 2025)]

    def cell(errs):
        if not errs:
            return {"n": 0, "mae": None, "ia5": None}
        s = 0.0
        for e in errs:
            s += e
        return {"n": len(errs), "mae": s / len(errs), "ia5": 100.0 * sum(e <= 5 for e in errs) / len(errs)}

    rows = sorted(preds, key=lambda p: p.id)
    errs = [abs(float(by_id[p.id].year) - float(p.year_hat)) for p in rows]
    total = 0.0
    for e in errs:
        total += e
    out = {"n": len(rows), "mae": total / len(rows)}
    out["ia"] = {str(k): 100.0 * sum(e <= k for e in errs) / len(rows) for k in (5, 20, 50, 100)}
    correct = 0
    for p in rows:
        y = by_id[p.id].year
        truth = [i for i, (a, b) in enumerate(styles) if a <= y < b][0]
        correct += p.coarse_period == truth
    out["cls_acc"] = 100.0 * correct / len(rows)

    def group(key):
        groups = {}
        for p, e in zip(rows, errs):
            k = key(by_id[p.id])
            if k is not None:
                groups.setdefault(k, []).append(e)
        return groups

    g = group(lambda r: [i for i, (a, b) in enumerate(pops) if a <= r.pageviews < b][0])
    out["popularity"] = [cell(g.get(i, [])) for i in range(5)]
    g = group(lambda r: r.continent.value)
    out["by_continent"] = {c.value: cell(g.get(c.value, [])) for c in Continent}
    g = group(lambda r: next((i for i, (a, b) in enumerate(eras) if a <= r.year < b), None))
    out["by_period"] = [cell(g.get(i, [])) for i in range(7)]

    def dens(r):
        if r.density is None:
            return None
        return "Rural" if r.density < 300 else ("Urban" if r.density > 1500 else "SemiUrban")

    g = group(dens)
    out["by_density"] = {k: cell(g.get(k, [])) for k in ("Rural", "SemiUrban", "Urban")}
    g = group(lambda r: None if r.renovation is Renovation.UNKNOWN else r.renovation.value)
    out["by_renovation"] = {k.value: cell(g.get(k.value, [])) for k in Renovation if k is not Renovation.UNKNOWN}
    return out


def assert_report_matches(report, oracle):
    js = report.to_json()
    for key in ("n", "mae", "ia", "cls_acc", "by_continent", "by_density", "by_renovation"):
        assert js[key] == oracle[key], key
    assert [{k: b[k] for k in ("n", "mae", "ia5")} for b in js["popularity"]["bins"]] == oracle["popularity"]
    assert [{k: b[k] for k in ("n", "mae", "ia5")} for b in js["by_period"]] == oracle["by_period"]
