"""Roll area-level estimates up to admin1 and national totals.

Aggregation weights are population shares: either external (census-style
area populations from a CSV) or internal (survey design-weight totals).
Smoothed fits aggregate draw by draw, so the rolled-up intervals inherit the
full posterior dependence structure; direct estimates aggregate as plain
weighted sums of points.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import SurveyDataset
from .direct import DomainEstimate
from .fay_herriot import FHFit

_SHARE_TOL = 1e-9


class AggregationError(ValueError):
    """Fractions and estimates do not line up."""


@dataclass(frozen=True)
class AggregationFractions:
    """Two-level population shares: area within admin1, admin1 within nation."""

    source: str  # "design_weights" or "external_population"
    within_admin1: dict[str, dict[str, float]]
    national: dict[str, float]

    def __post_init__(self):
        if self.source not in ("design_weights", "external_population"):
            raise AggregationError(f"unknown fraction source {self.source!r}")
        if not self.national:
            raise AggregationError("no admin1 shares")
        if abs(sum(self.national.values()) - 1.0) > _SHARE_TOL:
            raise AggregationError("admin1 shares must sum to 1")
        for adm, shares in self.within_admin1.items():
            if adm not in self.national:
                raise AggregationError(f"admin1 {adm!r} missing a national share")
            if not shares:
                raise AggregationError(f"admin1 {adm!r} has no area shares")
            if abs(sum(shares.values()) - 1.0) > _SHARE_TOL:
                raise AggregationError(f"area shares within {adm!r} must sum to 1")
            for area, s in shares.items():
                if s < 0:
                    raise AggregationError(f"negative share for {area!r}")

    @property
    def area_ids(self) -> tuple[str, ...]:
        return tuple(
            sorted(a for shares in self.within_admin1.values() for a in shares)
        )

    def admin1_of(self, area_id: str) -> str:
        for adm, shares in self.within_admin1.items():
            if area_id in shares:
                return adm
        raise KeyError(area_id)

    def national_share_of_area(self, area_id: str) -> float:
        adm = self.admin1_of(area_id)
        return self.national[adm] * self.within_admin1[adm][area_id]


def _fractions_from_totals(
    totals: dict[tuple[str, str], float], source: str
) -> AggregationFractions:
    admin1_totals: dict[str, float] = {}
    for (adm, _area), t in totals.items():
        admin1_totals[adm] = admin1_totals.get(adm, 0.0) + t
    grand = sum(admin1_totals.values())
    if grand <= 0:
        raise AggregationError("total mass is zero")
    within: dict[str, dict[str, float]] = {}
    for (adm, area), t in sorted(totals.items()):
        within.setdefault(adm, {})[area] = t / admin1_totals[adm]
    national = {adm: t / grand for adm, t in sorted(admin1_totals.items())}
    return AggregationFractions(
        source=source, within_admin1=within, national=national
    )


def design_weight_fractions(data: SurveyDataset) -> AggregationFractions:
    """Population shares estimated by summed design weights."""
    if len(data) == 0:
        raise AggregationError("empty dataset")
    table = data.clusters
    totals: dict[tuple[str, str], float] = {}
    for i in range(table.ids.shape[0]):
        key = (table.admin1[i], table.domain[i])
        totals[key] = totals.get(key, 0.0) + float(table.weight_total[i])
    return _fractions_from_totals(totals, "design_weights")


def load_population_fractions(path: str | Path) -> AggregationFractions:
    """Population shares from a CSV of area populations.

    Requires columns area_id and admin1_id plus either a single population
    column or per-class pop_* columns, which are summed.
    """
    path = Path(path)
    if not path.exists():
        raise AggregationError(f"population file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        names = reader.fieldnames or []
        if "area_id" not in names or "admin1_id" not in names:
            raise AggregationError(f"{path}: needs area_id and admin1_id columns")
        pop_cols = (
            ["population"]
            if "population" in names
            else [c for c in names if c.startswith("pop_")]
        )
        if not pop_cols:
            raise AggregationError(
                f"{path}: needs a population column or pop_* columns"
            )
        totals: dict[tuple[str, str], float] = {}
        for row in reader:
            key = (row["admin1_id"], row["area_id"])
            if key in totals:
                raise AggregationError(f"{path}: duplicate area {row['area_id']!r}")
            try:
                totals[key] = float(sum(float(row[c]) for c in pop_cols))
            except ValueError as exc:
                raise AggregationError(
                    f"{path}: bad population for {row['area_id']!r}"
                ) from exc
    return _fractions_from_totals(totals, "external_population")


@dataclass
class AggregateSummary:
    """One rolled-up estimate; draws present only on the smoothed path."""

    level: str  # "admin1" or "national"
    group_id: str
    point: float
    q2_5: float | None = None
    q97_5: float | None = None
    draws: np.ndarray | None = None


def _area_draw_matrix(fit: FHFit) -> tuple[dict[str, int], np.ndarray]:
    index = {a: i for i, a in enumerate(fit.area_ids)}
    return index, fit.prevalence_draws()


def _check_coverage(
    fractions: AggregationFractions, available: set[str]
) -> None:
    wanted = set(fractions.area_ids)
    missing = sorted(wanted - available)
    if missing:
        raise AggregationError(
            f"no estimate for areas {missing}; every area in the fractions "
            "needs a draw set or point estimate"
        )


def _summarize(level: str, group_id: str, draws: np.ndarray) -> AggregateSummary:
    qs = np.quantile(draws, [0.025, 0.5, 0.975])
    return AggregateSummary(
        level=level,
        group_id=group_id,
        point=float(qs[1]),
        q2_5=float(qs[0]),
        q97_5=float(qs[2]),
        draws=draws,
    )


def aggregate_admin1(
    source: FHFit | dict[str, DomainEstimate], fractions: AggregationFractions
) -> list[AggregateSummary]:
    """Aggregate area estimates to admin1 level.

    A smoothed fit aggregates per draw and reports the posterior median and
    95% interval of the aggregate; a dict of direct estimates aggregates the
    point estimates.
    """
    out = []
    if isinstance(source, FHFit):
        index, prev = _area_draw_matrix(source)
        _check_coverage(fractions, set(index))
        for adm in sorted(fractions.within_admin1):
            shares = fractions.within_admin1[adm]
            cols = [index[a] for a in sorted(shares)]
            weights = np.array([shares[a] for a in sorted(shares)])
            draws = prev[:, cols] @ weights
            out.append(_summarize("admin1", adm, draws))
        return out
    estimates = source
    usable = {
        a for a, est in estimates.items() if est.p_hat is not None
    }
    _check_coverage(fractions, usable)
    for adm in sorted(fractions.within_admin1):
        shares = fractions.within_admin1[adm]
        point = sum(estimates[a].p_hat * s for a, s in sorted(shares.items()))
        out.append(AggregateSummary(level="admin1", group_id=adm, point=point))
    return out


def aggregate_national(
    admin1_summaries: list[AggregateSummary], fractions: AggregationFractions
) -> AggregateSummary:
    """Combine admin1 aggregates into the national aggregate."""
    by_id = {s.group_id: s for s in admin1_summaries}
    missing = sorted(set(fractions.national) - set(by_id))
    if missing:
        raise AggregationError(f"no admin1 summary for {missing}")
    ids = sorted(fractions.national)
    weights = np.array([fractions.national[a] for a in ids])
    if all(by_id[a].draws is not None for a in ids):
        draws = np.column_stack([by_id[a].draws for a in ids]) @ weights
        return _summarize("national", "__national__", draws)
    points = np.array([by_id[a].point for a in ids])
    return AggregateSummary(
        level="national", group_id="__national__", point=float(points @ weights)
    )


def national_from_areas(
    source: FHFit | dict[str, DomainEstimate], fractions: AggregationFractions
) -> AggregateSummary:
    """Aggregate areas straight to the national level in one step.

    Equals the two-step admin1-then-national path (same fractions) up to
    floating-point roundoff.
    """
    weights = {
        a: fractions.national[fractions.admin1_of(a)]
        * fractions.within_admin1[fractions.admin1_of(a)][a]
        for a in fractions.area_ids
    }
    if isinstance(source, FHFit):
        index, prev = _area_draw_matrix(source)
        _check_coverage(fractions, set(index))
        ids = sorted(weights)
        cols = [index[a] for a in ids]
        w = np.array([weights[a] for a in ids])
        return _summarize("national", "__national__", prev[:, cols] @ w)
    estimates = source
    usable = {a for a, est in estimates.items() if est.p_hat is not None}
    _check_coverage(fractions, usable)
    point = sum(estimates[a].p_hat * w for a, w in sorted(weights.items()))
    return AggregateSummary(level="national", group_id="__national__", point=point)
