"""Survey data ingestion, validation, and domain extension.

Input data are two-stage stratified cluster samples: strata are
(admin1, urban_rural) pairs, clusters nest inside strata, and every cluster
belongs to exactly one estimation domain (an admin2-style area that may cut
across the planned strata but never across admin1 areas).

Two CSV schemas are accepted:

* unit rows:    admin1,urban_rural,cluster,domain,weight,outcome
* cluster rows: admin1,urban_rural,cluster,domain,weight,n_trials,events

Cluster rows expand to n_trials unit rows sharing the cluster weight.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

UNIT_COLUMNS = ("admin1", "urban_rural", "cluster", "domain", "weight", "outcome")
CLUSTER_COLUMNS = (
    "admin1",
    "urban_rural",
    "cluster",
    "domain",
    "weight",
    "n_trials",
    "events",
)
URBAN_RURAL_CLASSES = ("urban", "rural")

# cap on per-file parse errors reported before giving up
_MAX_REPORTED = 25


class SurveyDataError(ValueError):
    """Survey input violates the data contract (bad rows, bad structure)."""


class UnknownDomainError(KeyError):
    """Domain identifier absent from the dataset and not declared empty."""


@dataclass(frozen=True)
class UnitRecord:
    """One sampled individual."""

    admin1_id: str
    urban_rural: str
    cluster_id: str
    domain_id: str
    weight: float
    outcome: int
    unit_id: int = 0


@dataclass(frozen=True)
class ClusterAggregate:
    """Binomial summary of one cluster; expands to unit records."""

    admin1_id: str
    urban_rural: str
    cluster_id: str
    domain_id: str
    weight: float  # shared by all units in the cluster
    n_trials: int
    events: int

    def expand(self) -> list[UnitRecord]:
        records = []
        for k in range(self.n_trials):
            records.append(
                UnitRecord(
                    admin1_id=self.admin1_id,
                    urban_rural=self.urban_rural,
                    cluster_id=self.cluster_id,
                    domain_id=self.domain_id,
                    weight=self.weight,
                    outcome=1 if k < self.events else 0,
                    unit_id=k,
                )
            )
        return records


@dataclass(frozen=True)
class _ClusterTable:
    """Per-cluster sufficient statistics, shared by every estimator."""

    ids: np.ndarray  # unique cluster ids (sorted)
    admin1: np.ndarray
    urban_rural: np.ndarray
    domain: np.ndarray
    weight_total: np.ndarray  # sum of unit weights in the cluster
    weighted_events: np.ndarray  # sum of weight * outcome
    n_units: np.ndarray
    events: np.ndarray
    # planned design: number of sampled clusters per (admin1, urban_rural)
    stratum_sizes: dict[tuple[str, str], int]


class SurveyDataset:
    """Columnar unit-level survey data, immutable after construction.

    Attributes are parallel numpy arrays over units. Weights are final
    analysis weights and are never rescaled by this package.
    """

    def __init__(
        self,
        admin1: np.ndarray,
        urban_rural: np.ndarray,
        cluster: np.ndarray,
        domain: np.ndarray,
        weight: np.ndarray,
        outcome: np.ndarray,
        unit_id: np.ndarray | None = None,
        _validated: bool = False,
    ):
        self.admin1 = np.asarray(admin1, dtype=object)
        self.urban_rural = np.asarray(urban_rural, dtype=object)
        self.cluster = np.asarray(cluster, dtype=object)
        self.domain = np.asarray(domain, dtype=object)
        self.weight = np.asarray(weight, dtype=np.float64)
        self.outcome = np.asarray(outcome, dtype=np.int8)
        if unit_id is None:
            unit_id = _sequential_unit_ids(self.cluster)
        self.unit_id = np.asarray(unit_id, dtype=np.int64)
        lengths = {
            arr.shape[0]
            for arr in (
                self.admin1,
                self.urban_rural,
                self.cluster,
                self.domain,
                self.weight,
                self.outcome,
                self.unit_id,
            )
        }
        if len(lengths) != 1:
            raise SurveyDataError("column arrays have mismatched lengths")
        if not _validated:
            _check_structure(self)

    @classmethod
    def from_records(cls, records: list[UnitRecord]) -> "SurveyDataset":
        return cls(
            admin1=np.array([r.admin1_id for r in records], dtype=object),
            urban_rural=np.array([r.urban_rural for r in records], dtype=object),
            cluster=np.array([r.cluster_id for r in records], dtype=object),
            domain=np.array([r.domain_id for r in records], dtype=object),
            weight=np.array([r.weight for r in records], dtype=np.float64),
            outcome=np.array([r.outcome for r in records], dtype=np.int8),
            unit_id=np.array([r.unit_id for r in records], dtype=np.int64),
        )

    def __len__(self) -> int:
        return self.weight.shape[0]

    @cached_property
    def _cluster_index(self) -> tuple[np.ndarray, np.ndarray]:
        ids, inverse = np.unique(self.cluster, return_inverse=True)
        return ids, inverse

    @cached_property
    def clusters(self) -> _ClusterTable:
        ids, inverse = self._cluster_index
        n = ids.shape[0]
        if n == 0:
            return _ClusterTable(
                ids=ids,
                admin1=np.empty(0, dtype=object),
                urban_rural=np.empty(0, dtype=object),
                domain=np.empty(0, dtype=object),
                weight_total=np.empty(0),
                weighted_events=np.empty(0),
                n_units=np.empty(0, dtype=np.int64),
                events=np.empty(0, dtype=np.int64),
                stratum_sizes={},
            )
        # unit index of the first occurrence of each cluster
        seen_order = np.argsort(inverse, kind="stable")
        boundaries = np.searchsorted(inverse[seen_order], np.arange(n))
        first = seen_order[boundaries]
        cl_admin1 = self.admin1[first]
        cl_urban_rural = self.urban_rural[first]
        sizes: dict[tuple[str, str], int] = {}
        for a, u in zip(cl_admin1, cl_urban_rural):
            sizes[(a, u)] = sizes.get((a, u), 0) + 1
        y = self.outcome.astype(np.float64)
        return _ClusterTable(
            ids=ids,
            admin1=cl_admin1,
            urban_rural=cl_urban_rural,
            domain=self.domain[first],
            weight_total=np.bincount(inverse, weights=self.weight, minlength=n),
            weighted_events=np.bincount(
                inverse, weights=self.weight * y, minlength=n
            ),
            n_units=np.bincount(inverse, minlength=n).astype(np.int64),
            events=np.bincount(inverse, weights=y, minlength=n).astype(np.int64),
            stratum_sizes=sizes,
        )

    @cached_property
    def domain_ids(self) -> tuple[str, ...]:
        return tuple(sorted(set(self.clusters.domain.tolist())))

    @cached_property
    def strata(self) -> tuple[tuple[str, str], ...]:
        return tuple(sorted(self.clusters.stratum_sizes))

    @cached_property
    def domain_admin1(self) -> dict[str, str]:
        table = self.clusters
        return {d: a for d, a in zip(table.domain, table.admin1)}

    def stratum_size(self, admin1_id: str, urban_rural: str) -> int:
        """Number of sampled clusters in a planned stratum."""
        return self.clusters.stratum_sizes.get((admin1_id, urban_rural), 0)


def _sequential_unit_ids(cluster: np.ndarray) -> np.ndarray:
    ids = np.zeros(cluster.shape[0], dtype=np.int64)
    counters: dict[str, int] = {}
    for i, c in enumerate(cluster):
        k = counters.get(c, 0)
        ids[i] = k
        counters[c] = k + 1
    return ids


def _check_structure(data: SurveyDataset) -> None:
    """Structural invariants that hold regardless of input path."""
    bad = ~np.isfinite(data.weight) | (data.weight <= 0)
    if bad.any():
        i = int(np.argmax(bad))
        raise SurveyDataError(f"unit {i}: weight must be positive and finite")
    bad = (data.outcome != 0) & (data.outcome != 1)
    if bad.any():
        i = int(np.argmax(bad))
        raise SurveyDataError(f"unit {i}: outcome must be 0 or 1")
    for u in set(data.urban_rural.tolist()):
        if u not in URBAN_RURAL_CLASSES:
            raise SurveyDataError(f"unknown urban_rural class {u!r}")
    # each cluster lives in one stratum and one domain
    ids, inverse = data._cluster_index
    for name, col in (
        ("admin1", data.admin1),
        ("urban_rural", data.urban_rural),
        ("domain", data.domain),
    ):
        _, codes = np.unique(col, return_inverse=True)
        lo = np.full(ids.shape[0], np.iinfo(np.int64).max)
        hi = np.full(ids.shape[0], -1, dtype=np.int64)
        np.minimum.at(lo, inverse, codes)
        np.maximum.at(hi, inverse, codes)
        conflict = lo != hi
        if conflict.any():
            c = ids[int(np.argmax(conflict))]
            raise SurveyDataError(
                f"cluster {c!r} appears with more than one {name} value"
            )
    # each domain lives in one admin1
    table = data.clusters
    seen: dict[str, str] = {}
    for d, a in zip(table.domain, table.admin1):
        if d in seen and seen[d] != a:
            raise SurveyDataError(
                f"domain {d!r} spans admin1 areas {seen[d]!r} and {a!r}"
            )
        seen.setdefault(d, a)


def load_survey(path: str | Path, schema: str = "unit") -> SurveyDataset:
    """Read a survey CSV in the unit or cluster schema.

    Malformed rows are collected (up to a cap) and raised together as one
    SurveyDataError so a data fix needs only one round trip.
    """
    if schema not in ("unit", "cluster"):
        raise ValueError(f"schema must be 'unit' or 'cluster', got {schema!r}")
    columns = UNIT_COLUMNS if schema == "unit" else CLUSTER_COLUMNS
    path = Path(path)
    if not path.exists():
        raise SurveyDataError(f"input file not found: {path}")

    admin1: list[str] = []
    urban_rural: list[str] = []
    cluster: list[str] = []
    domain: list[str] = []
    weight: list[float] = []
    outcome: list[int] = []
    errors: list[str] = []

    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in columns if c not in header]
        if missing:
            raise SurveyDataError(
                f"{path.name}: missing column(s) {', '.join(missing)}"
            )
        for lineno, row in enumerate(reader, start=2):
            if len(errors) >= _MAX_REPORTED:
                errors.append("... further errors suppressed")
                break
            try:
                a = row["admin1"].strip()
                u = row["urban_rural"].strip().lower()
                c = row["cluster"].strip()
                d = row["domain"].strip()
                if u not in URBAN_RURAL_CLASSES:
                    raise ValueError(f"urban_rural must be urban or rural, got {u!r}")
                if not a or not c or not d:
                    raise ValueError("admin1, cluster, and domain must be non-empty")
                w = float(row["weight"])
                if not np.isfinite(w) or w <= 0:
                    raise ValueError(f"weight must be positive, got {row['weight']}")
                if schema == "unit":
                    y_raw = row["outcome"].strip()
                    if y_raw not in ("0", "1"):
                        raise ValueError(f"outcome must be 0 or 1, got {y_raw!r}")
                    admin1.append(a)
                    urban_rural.append(u)
                    cluster.append(c)
                    domain.append(d)
                    weight.append(w)
                    outcome.append(int(y_raw))
                else:
                    n_trials = int(row["n_trials"])
                    events = int(row["events"])
                    if n_trials < 0:
                        raise ValueError("n_trials must be nonnegative")
                    if events < 0 or events > n_trials:
                        raise ValueError(
                            f"events must lie in [0, n_trials], got {events}/{n_trials}"
                        )
                    admin1.extend([a] * n_trials)
                    urban_rural.extend([u] * n_trials)
                    cluster.extend([c] * n_trials)
                    domain.extend([d] * n_trials)
                    weight.extend([w] * n_trials)
                    outcome.extend([1] * events + [0] * (n_trials - events))
            except (ValueError, KeyError) as exc:
                errors.append(f"row {lineno}: {exc}")
    if errors:
        raise SurveyDataError(f"{path.name}:\n  " + "\n  ".join(errors))

    data = SurveyDataset(
        admin1=np.array(admin1, dtype=object),
        urban_rural=np.array(urban_rural, dtype=object),
        cluster=np.array(cluster, dtype=object),
        domain=np.array(domain, dtype=object),
        weight=np.array(weight, dtype=np.float64),
        outcome=np.array(outcome, dtype=np.int8),
    )
    return data


def save_survey(data: SurveyDataset, path: str | Path) -> None:
    """Write unit-schema CSV that reloads losslessly (weights via repr)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(UNIT_COLUMNS)
        for i in range(len(data)):
            writer.writerow(
                [
                    data.admin1[i],
                    data.urban_rural[i],
                    data.cluster[i],
                    data.domain[i],
                    repr(float(data.weight[i])),
                    int(data.outcome[i]),
                ]
            )


@dataclass(frozen=True)
class StratumBlock:
    """In-domain cluster totals for one contributing planned stratum."""

    admin1_id: str
    urban_rural: str
    n_planned: int  # sampled clusters in the whole planned stratum
    cluster_ids: np.ndarray
    weight_totals: np.ndarray  # per in-domain cluster, sum of extended weights
    weighted_events: np.ndarray
    n_units: np.ndarray
    events: np.ndarray


class ExtendedDataset:
    """One domain's extended view of a survey.

    Every sampled unit is retained; units outside the domain carry extended
    outcome z = 0 and extended weight v = 0 so that unplanned-domain
    membership stays part of the design randomness.
    """

    def __init__(self, data: SurveyDataset, domain_id: str, allow_missing: bool = False):
        self.data = data
        self.domain_id = domain_id
        table = data.clusters
        in_domain = table.domain == domain_id
        if not in_domain.any():
            if not allow_missing:
                raise UnknownDomainError(
                    f"domain {domain_id!r} has no sampled units; pass "
                    "allow_missing=True to treat it as an empty domain"
                )
            self.no_data = True
            self.admin1_id = None
            self.blocks: tuple[StratumBlock, ...] = ()
            return
        self.no_data = False
        idx = np.flatnonzero(in_domain)
        self.admin1_id = table.admin1[idx[0]]
        blocks = []
        classes = sorted(set(table.urban_rural[idx].tolist()))
        for u in classes:
            sel = idx[table.urban_rural[idx] == u]
            order = np.argsort(table.ids[sel])
            sel = sel[order]
            blocks.append(
                StratumBlock(
                    admin1_id=self.admin1_id,
                    urban_rural=u,
                    n_planned=data.stratum_size(self.admin1_id, u),
                    cluster_ids=table.ids[sel],
                    weight_totals=table.weight_total[sel].copy(),
                    weighted_events=table.weighted_events[sel].copy(),
                    n_units=table.n_units[sel].copy(),
                    events=table.events[sel].copy(),
                )
            )
        self.blocks = tuple(blocks)

    @cached_property
    def in_domain(self) -> np.ndarray:
        """Boolean unit mask for domain membership."""
        return np.asarray(self.data.domain == self.domain_id)

    @cached_property
    def z(self) -> np.ndarray:
        """Extended outcome: observed outcome inside the domain, else 0."""
        return self.data.outcome.astype(np.float64) * self.in_domain

    @cached_property
    def v(self) -> np.ndarray:
        """Extended weight: design weight inside the domain, else 0."""
        return self.data.weight * self.in_domain

    @property
    def n_clusters_in_domain(self) -> int:
        return sum(b.cluster_ids.shape[0] for b in self.blocks)

    @property
    def weight_total(self) -> float:
        return float(sum(b.weight_totals.sum() for b in self.blocks))


def extend_domain(
    data: SurveyDataset, domain_id: str, allow_missing: bool = False
) -> ExtendedDataset:
    """Build the extended-variable view of one domain."""
    return ExtendedDataset(data, domain_id, allow_missing=allow_missing)


@dataclass
class ValidationReport:
    n_units: int
    n_clusters: int
    n_strata: int
    n_domains: int
    stratum_rows: list[tuple[str, str, int, int, float]] = field(default_factory=list)
    domain_rows: list[tuple[str, str, int, int]] = field(default_factory=list)
    weight_min: float = float("nan")
    weight_max: float = float("nan")
    weight_mean: float = float("nan")
    violations: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def to_text(self) -> str:
        lines = [
            f"units: {self.n_units}",
            f"clusters: {self.n_clusters}",
            f"strata: {self.n_strata}",
            f"domains: {self.n_domains}",
            f"weights: min {self.weight_min!r} max {self.weight_max!r} "
            f"mean {self.weight_mean!r}",
            "",
            "stratum (admin1, class): clusters units weight_total",
        ]
        for a, u, nc, nu, wt in self.stratum_rows:
            lines.append(f"  {a}, {u}: {nc} {nu} {wt!r}")
        lines.append("")
        lines.append("domain (admin1): clusters units")
        for d, a, nc, nu in self.domain_rows:
            lines.append(f"  {d} ({a}): {nc} {nu}")
        if self.warnings:
            lines.append("")
            lines.append("warnings:")
            lines.extend(f"  {w}" for w in self.warnings)
        if self.violations:
            lines.append("")
            lines.append("violations:")
            lines.extend(f"  {v}" for v in self.violations)
        return "\n".join(lines)


def validate(data: SurveyDataset) -> ValidationReport:
    """Summarize design structure; collect violations without raising."""
    table = data.clusters
    report = ValidationReport(
        n_units=len(data),
        n_clusters=table.ids.shape[0],
        n_strata=len(table.stratum_sizes),
        n_domains=len(data.domain_ids),
    )
    if len(data):
        report.weight_min = float(data.weight.min())
        report.weight_max = float(data.weight.max())
        report.weight_mean = float(data.weight.mean())
    for (a, u) in sorted(table.stratum_sizes):
        sel = (table.admin1 == a) & (table.urban_rural == u)
        report.stratum_rows.append(
            (
                a,
                u,
                int(sel.sum()),
                int(table.n_units[sel].sum()),
                float(table.weight_total[sel].sum()),
            )
        )
        if table.stratum_sizes[(a, u)] == 1:
            report.warnings.append(
                f"stratum ({a}, {u}) has a single sampled cluster; its domains "
                "cannot have a defined design variance"
            )
    for d in data.domain_ids:
        sel = table.domain == d
        report.domain_rows.append(
            (
                d,
                data.domain_admin1[d],
                int(sel.sum()),
                int(table.n_units[sel].sum()),
            )
        )
    # duplicate unit identifiers within a cluster
    if len(data):
        _, inverse = data._cluster_index
        key = inverse.astype(np.int64) * (data.unit_id.max() + 1 if len(data) else 1)
        key = key + data.unit_id
        uniq, counts = np.unique(key, return_counts=True)
        if (counts > 1).any():
            n_dup = int((counts > 1).sum())
            bad_key = uniq[np.argmax(counts > 1)]
            cluster_code = int(bad_key // (data.unit_id.max() + 1))
            report.violations.append(
                f"{n_dup} duplicated (cluster, unit_id) pairs, first in cluster "
                f"{data._cluster_index[0][cluster_code]!r}"
            )
    return report
