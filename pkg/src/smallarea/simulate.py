"""Finite-population simulation harness for the variance strategies.

A synthetic population is a fixed set of clusters with materialized binary
outcomes. Replicated stratified two-stage samples are drawn from it (PPS
clusters, then a fixed-size within-cluster subsample), each replicate is
estimated under the three repair strategies, and intervals are scored
against the finite-population domain prevalences.

Per-unit success probabilities follow a logit-additive model: a baseline,
an area effect, a cluster effect, and unit noise, each Gaussian on the
logit scale with its own scale parameter.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.special import expit, logit

from .augment import Strategy, apply_strategy, national_priors
from .data import SurveyDataset
from .direct import DomainEstimate, Legality
from .interval import Interval, estimate_interval, interval_score, point_interval

KNOWN_CLASSES = ("rural", "urban")


class ConfigError(ValueError):
    """Invalid or inconsistent study configuration."""


class SimulationError(RuntimeError):
    """A drawn design is infeasible (for example n_h exceeds the frame)."""


@dataclass(frozen=True)
class AreaSpec:
    """One small area: identifier, parent stratum group, class populations."""

    area_id: str
    admin1_id: str
    populations: tuple[tuple[str, int], ...]  # (class, persons)

    def population(self, urban_rural: str) -> int:
        for cls, n in self.populations:
            if cls == urban_rural:
                return n
        return 0

    @property
    def total_population(self) -> int:
        return sum(n for _, n in self.populations)


@dataclass(frozen=True)
class PopulationConfig:
    """Synthetic-population and design parameters for one study."""

    name: str
    areas: tuple[AreaSpec, ...]
    classes: tuple[str, ...]
    m0: float
    sigma_area: float
    sigma_cluster: float
    sigma_unit: float
    frame_clusters_total: int
    sample_clusters: tuple[tuple[str, int], ...]  # per class
    units_per_cluster: int = 30
    min_cluster_size: int = 30
    population_seed: int = 1
    fixed_population: bool = True

    def __post_init__(self):
        if not 0.0 < self.m0 < 1.0:
            raise ConfigError(f"m0 must be in (0, 1), got {self.m0}")
        for label, s in (
            ("sigma_area", self.sigma_area),
            ("sigma_cluster", self.sigma_cluster),
            ("sigma_unit", self.sigma_unit),
        ):
            if s < 0:
                raise ConfigError(f"{label} must be nonnegative, got {s}")
        if self.units_per_cluster < 1:
            raise ConfigError("units_per_cluster must be positive")
        if self.min_cluster_size < self.units_per_cluster:
            raise ConfigError(
                "min_cluster_size must be at least units_per_cluster so "
                "stage two always finds enough units"
            )
        if not self.areas:
            raise ConfigError("config declares no areas")
        if not self.classes:
            raise ConfigError("config declares no classes")
        for cls in self.classes:
            if cls not in KNOWN_CLASSES:
                raise ConfigError(f"unknown class {cls!r}; use {KNOWN_CLASSES}")
        seen = set()
        for area in self.areas:
            if area.area_id in seen:
                raise ConfigError(f"duplicate area id {area.area_id!r}")
            seen.add(area.area_id)
            if area.total_population <= 0:
                raise ConfigError(f"area {area.area_id!r} has no population")
        if self.frame_clusters_total < len(self.strata):
            raise ConfigError("frame_clusters_total smaller than stratum count")
        got = {cls for cls, _ in self.sample_clusters}
        if got != set(self.classes):
            raise ConfigError("sample_clusters must cover exactly the classes")
        for cls, n in self.sample_clusters:
            if n < 1:
                raise ConfigError(f"sample count for {cls} must be positive")

    @cached_property
    def strata(self) -> tuple[tuple[str, str], ...]:
        """(admin1, class) pairs with positive population, sorted."""
        pairs = set()
        for area in self.areas:
            for cls, n in area.populations:
                if n > 0:
                    pairs.add((area.admin1_id, cls))
        return tuple(sorted(pairs))

    def sample_size(self, urban_rural: str) -> int:
        for cls, n in self.sample_clusters:
            if cls == urban_rural:
                return n
        raise KeyError(urban_rural)


_CONFIG_KEYS = {
    "name",
    "classes",
    "m0",
    "sigma_area",
    "sigma_cluster",
    "sigma_unit",
    "frame_clusters_total",
    "sample_clusters_per_stratum",
    "sample_clusters_rural",
    "sample_clusters_urban",
    "units_per_cluster",
    "min_cluster_size",
    "population_seed",
    "fixed_population",
    "areas_file",
}

_REQUIRED_KEYS = {
    "m0",
    "sigma_area",
    "sigma_cluster",
    "sigma_unit",
    "frame_clusters_total",
    "areas_file",
}


def _parse_bool(raw: str, key: str) -> bool:
    low = raw.lower()
    if low in ("true", "yes", "1"):
        return True
    if low in ("false", "no", "0"):
        return False
    raise ConfigError(f"{key} must be boolean, got {raw!r}")


def parse_config(path: str | Path) -> PopulationConfig:
    """Read a flat key = value study file plus its companion area roster."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    values: dict[str, str] = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, _, raw = body.partition("=")
        key = key.strip()
        raw = raw.strip()
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        values[key] = raw
    missing = _REQUIRED_KEYS - values.keys()
    if missing:
        raise ConfigError(f"{path}: missing keys {sorted(missing)}")

    try:
        classes = tuple(
            c.strip() for c in values.get("classes", "rural").split(",") if c.strip()
        )
        m0 = float(values["m0"])
        sigma_area = float(values["sigma_area"])
        sigma_cluster = float(values["sigma_cluster"])
        sigma_unit = float(values["sigma_unit"])
        frame_total = int(values["frame_clusters_total"])
        units = int(values.get("units_per_cluster", "30"))
        min_size = int(values.get("min_cluster_size", "30"))
        seed = int(values.get("population_seed", "1"))
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    fixed = _parse_bool(values.get("fixed_population", "true"), "fixed_population")
    for cls in classes:
        if cls not in KNOWN_CLASSES:
            raise ConfigError(f"{path}: unknown class {cls!r}; use {KNOWN_CLASSES}")

    default_n = values.get("sample_clusters_per_stratum")
    sample_clusters = []
    for cls in classes:
        raw = values.get(f"sample_clusters_{cls}", default_n)
        if raw is None:
            raise ConfigError(
                f"{path}: sample size for class {cls!r} not given (set "
                f"sample_clusters_per_stratum or sample_clusters_{cls})"
            )
        sample_clusters.append((cls, int(raw)))

    areas_path = Path(values["areas_file"])
    if not areas_path.is_absolute():
        areas_path = path.parent / areas_path
    areas = _load_areas(areas_path, classes)
    return PopulationConfig(
        name=values.get("name", path.stem),
        areas=areas,
        classes=classes,
        m0=m0,
        sigma_area=sigma_area,
        sigma_cluster=sigma_cluster,
        sigma_unit=sigma_unit,
        frame_clusters_total=frame_total,
        sample_clusters=tuple(sample_clusters),
        units_per_cluster=units,
        min_cluster_size=min_size,
        population_seed=seed,
        fixed_population=fixed,
    )


def _load_areas(path: Path, classes: tuple[str, ...]) -> tuple[AreaSpec, ...]:
    if not path.exists():
        raise ConfigError(f"areas file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        needed = {"area_id", "admin1_id"} | {f"pop_{c}" for c in classes}
        if reader.fieldnames is None or not needed.issubset(reader.fieldnames):
            raise ConfigError(
                f"{path}: needs columns {sorted(needed)}, has {reader.fieldnames}"
            )
        areas = []
        for row in reader:
            try:
                pops = tuple((c, int(row[f"pop_{c}"])) for c in classes)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{path}: bad population for {row['area_id']!r}") from exc
            areas.append(
                AreaSpec(
                    area_id=row["area_id"],
                    admin1_id=row["admin1_id"],
                    populations=pops,
                )
            )
    if not areas:
        raise ConfigError(f"{path}: no area rows")
    return tuple(areas)


def _largest_remainder(weights: np.ndarray, total: int) -> np.ndarray:
    """Integer allocation proportional to weights, summing exactly to total."""
    raw = weights / weights.sum() * total
    base = np.floor(raw).astype(np.int64)
    shortfall = total - int(base.sum())
    order = np.argsort(-(raw - base), kind="stable")
    base[order[:shortfall]] += 1
    return base


@dataclass(frozen=True)
class FrameCell:
    """Cluster allocation for one area within one stratum class."""

    area_id: str
    admin1_id: str
    urban_rural: str
    n_clusters: int
    population: int


def allocate_frame(cfg: PopulationConfig) -> tuple[FrameCell, ...]:
    """Allocate the national cluster frame to strata, then to areas.

    Stratum totals follow largest-remainder apportionment of the configured
    national frame size; within a stratum each area receives
    round(N_area / N_stratum * C_stratum) clusters.
    """
    strata = cfg.strata
    stratum_pop = np.array(
        [
            sum(a.population(cls) for a in cfg.areas if a.admin1_id == adm)
            for adm, cls in strata
        ],
        dtype=np.float64,
    )
    frame_per_stratum = _largest_remainder(stratum_pop, cfg.frame_clusters_total)
    cells = []
    for (adm, cls), c_total, n_total in zip(strata, frame_per_stratum, stratum_pop):
        for area in cfg.areas:
            if area.admin1_id != adm:
                continue
            n_area = area.population(cls)
            if n_area <= 0:
                continue
            c_area = int(math.floor(n_area / n_total * c_total + 0.5))
            if c_area == 0:
                continue
            if n_area < cfg.min_cluster_size * c_area:
                raise ConfigError(
                    f"area {area.area_id!r} class {cls}: population {n_area} "
                    f"cannot host {c_area} clusters of at least "
                    f"{cfg.min_cluster_size} persons"
                )
            cells.append(
                FrameCell(
                    area_id=area.area_id,
                    admin1_id=adm,
                    urban_rural=cls,
                    n_clusters=c_area,
                    population=n_area,
                )
            )
    return tuple(cells)


@dataclass
class SyntheticPopulation:
    """A materialized finite population of clusters with binary outcomes."""

    config_name: str
    cluster_ids: np.ndarray  # object
    cluster_area: np.ndarray  # object
    cluster_admin1: np.ndarray  # object
    cluster_class: np.ndarray  # object
    cluster_size: np.ndarray  # int64
    cluster_events: np.ndarray  # int64
    cluster_offset: np.ndarray  # int64 start into outcomes
    outcomes: np.ndarray  # uint8 per person

    @property
    def n_clusters(self) -> int:
        return self.cluster_size.shape[0]

    @property
    def n_persons(self) -> int:
        return int(self.cluster_size.sum())

    @cached_property
    def stratum_members(self) -> dict[tuple[str, str], np.ndarray]:
        out: dict[tuple[str, str], list[int]] = {}
        for i in range(self.n_clusters):
            key = (self.cluster_admin1[i], self.cluster_class[i])
            out.setdefault(key, []).append(i)
        return {k: np.array(v, dtype=np.int64) for k, v in sorted(out.items())}

    @cached_property
    def area_ids(self) -> tuple[str, ...]:
        return tuple(sorted(set(self.cluster_area.tolist())))


def _cluster_sizes(n_clusters: int, total: int, min_size: int, rng) -> np.ndarray:
    """Split total persons into n_clusters sizes >= min_size, exactly.

    Sizes are proportional to Exponential(1) draws, integerized by largest
    remainder, then adjusted up to the minimum by taking persons from the
    largest clusters.
    """
    fractions = rng.exponential(1.0, n_clusters)
    raw = fractions / fractions.sum() * total
    sizes = np.floor(raw).astype(np.int64)
    shortfall = total - int(sizes.sum())
    order = np.argsort(-(raw - sizes), kind="stable")
    sizes[order[:shortfall]] += 1
    bump = np.maximum(min_size - sizes, 0)
    sizes += bump
    excess = int(bump.sum())
    while excess > 0:
        j = int(np.argmax(sizes))
        take = min(excess, int(sizes[j]) - min_size)
        if take <= 0:
            raise ConfigError(
                f"cannot fit {n_clusters} clusters of >= {min_size} in {total}"
            )
        sizes[j] -= take
        excess -= take
    return sizes


def synthesize_population(
    cfg: PopulationConfig, seed: int | tuple | None = None
) -> SyntheticPopulation:
    """Materialize one finite population under the configured model."""
    rng = np.random.default_rng(cfg.population_seed if seed is None else seed)
    cells = allocate_frame(cfg)
    base = logit(cfg.m0)
    area_effect = {
        a.area_id: cfg.sigma_area * rng.standard_normal() for a in cfg.areas
    }
    ids, areas, admin1s, classes_col = [], [], [], []
    sizes_all, events_all, offsets = [], [], []
    chunks = []
    offset = 0
    for cell in cells:
        sizes = _cluster_sizes(
            cell.n_clusters, cell.population, cfg.min_cluster_size, rng
        )
        cluster_logit = (
            base
            + area_effect[cell.area_id]
            + cfg.sigma_cluster * rng.standard_normal(cell.n_clusters)
        )
        per_person = np.repeat(cluster_logit, sizes)
        if cfg.sigma_unit > 0:
            per_person = per_person + cfg.sigma_unit * rng.standard_normal(
                per_person.shape[0]
            )
        y = (rng.random(per_person.shape[0]) < expit(per_person)).astype(np.uint8)
        chunks.append(y)
        bounds = np.concatenate([[0], np.cumsum(sizes)])
        for k in range(cell.n_clusters):
            ids.append(f"{cell.area_id}:{cell.urban_rural}:{k:05d}")
            areas.append(cell.area_id)
            admin1s.append(cell.admin1_id)
            classes_col.append(cell.urban_rural)
            sizes_all.append(int(sizes[k]))
            events_all.append(int(y[bounds[k] : bounds[k + 1]].sum()))
            offsets.append(offset + int(bounds[k]))
        offset += int(sizes.sum())
    return SyntheticPopulation(
        config_name=cfg.name,
        cluster_ids=np.array(ids, dtype=object),
        cluster_area=np.array(areas, dtype=object),
        cluster_admin1=np.array(admin1s, dtype=object),
        cluster_class=np.array(classes_col, dtype=object),
        cluster_size=np.array(sizes_all, dtype=np.int64),
        cluster_events=np.array(events_all, dtype=np.int64),
        cluster_offset=np.array(offsets, dtype=np.int64),
        outcomes=np.concatenate(chunks) if chunks else np.zeros(0, dtype=np.uint8),
    )


def true_domain_prevalence(pop: SyntheticPopulation, domain_id: str) -> float:
    """Unweighted mean outcome over every person in the domain."""
    mask = pop.cluster_area == domain_id
    if not mask.any():
        raise KeyError(f"domain {domain_id!r} not present in the population")
    return float(pop.cluster_events[mask].sum() / pop.cluster_size[mask].sum())


def true_prevalences(pop: SyntheticPopulation) -> dict[str, float]:
    out = {a: true_domain_prevalence(pop, a) for a in pop.area_ids}
    out["__national__"] = float(pop.cluster_events.sum() / pop.n_persons)
    return out


@dataclass(frozen=True)
class StratumDraw:
    admin1_id: str
    urban_rural: str
    n_planned: int
    n_certainty: int
    frame_clusters: int
    frame_persons: int


@dataclass
class DrawResult:
    dataset: SurveyDataset
    log: tuple[StratumDraw, ...]


def draw_sample(
    pop: SyntheticPopulation, cfg: PopulationConfig, rng: np.random.Generator
) -> DrawResult:
    """One stratified two-stage sample.

    Stage one selects n_h clusters per stratum by systematic PPS on a
    randomly ordered frame, iterating any cluster whose inclusion
    probability reaches one into a certainty take and re-solving the
    remainder. Stage two is a without-replacement subsample of a fixed
    number of persons per selected cluster. Design weights are the inverse
    inclusion probabilities of the two stages.
    """
    take = cfg.units_per_cluster
    sel_clusters: list[int] = []
    sel_pi1: list[float] = []
    log = []
    for (adm, cls), members in pop.stratum_members.items():
        n_h = cfg.sample_size(cls)
        if n_h > members.size:
            raise SimulationError(
                f"stratum ({adm}, {cls}) has {members.size} frame clusters, "
                f"cannot sample {n_h}"
            )
        remaining = members.copy()
        n_rem = n_h
        certain: list[int] = []
        while n_rem > 0:
            sizes = pop.cluster_size[remaining].astype(np.float64)
            total = sizes.sum()
            prob = n_rem * sizes / total
            over = prob >= 1.0
            if not over.any():
                break
            certain.extend(remaining[over].tolist())
            remaining = remaining[~over]
            n_rem -= int(over.sum())
        for c in certain:
            sel_clusters.append(c)
            sel_pi1.append(1.0)
        if n_rem > 0:
            perm = rng.permutation(remaining)
            sizes = pop.cluster_size[perm].astype(np.float64)
            cum = np.cumsum(sizes)
            total = cum[-1]
            step = total / n_rem
            points = rng.uniform(0.0, step) + step * np.arange(n_rem)
            idx = np.searchsorted(cum, points, side="right")
            chosen = perm[np.minimum(idx, perm.size - 1)]
            for c in chosen:
                sel_clusters.append(int(c))
                sel_pi1.append(float(n_rem * pop.cluster_size[c] / total))
        log.append(
            StratumDraw(
                admin1_id=adm,
                urban_rural=cls,
                n_planned=n_h,
                n_certainty=len(certain),
                frame_clusters=int(members.size),
                frame_persons=int(pop.cluster_size[members].sum()),
            )
        )

    n_sel = len(sel_clusters)
    n_units = n_sel * take
    admin1 = np.empty(n_units, dtype=object)
    urban_rural = np.empty(n_units, dtype=object)
    cluster = np.empty(n_units, dtype=object)
    domain = np.empty(n_units, dtype=object)
    weight = np.empty(n_units, dtype=np.float64)
    outcome = np.empty(n_units, dtype=np.int8)
    unit_id = np.tile(np.arange(take, dtype=np.int64), n_sel)
    row = 0
    for c, pi1 in zip(sel_clusters, sel_pi1):
        size = int(pop.cluster_size[c])
        pick = rng.choice(size, size=take, replace=False)
        sl = slice(row, row + take)
        admin1[sl] = pop.cluster_admin1[c]
        urban_rural[sl] = pop.cluster_class[c]
        cluster[sl] = pop.cluster_ids[c]
        domain[sl] = pop.cluster_area[c]
        weight[sl] = size / (pi1 * take)
        off = int(pop.cluster_offset[c])
        outcome[sl] = pop.outcomes[off + pick]
        row += take
    dataset = SurveyDataset(
        admin1=admin1,
        urban_rural=urban_rural,
        cluster=cluster,
        domain=domain,
        weight=weight,
        outcome=outcome,
        unit_id=unit_id,
        _validated=True,
    )
    return DrawResult(dataset=dataset, log=tuple(log))


def _interval_for(est: DomainEstimate, level: float) -> Interval:
    if est.p_hat is None:
        return point_interval(0.0, level)
    return estimate_interval(est.p_hat, est.variance, level)


_ILLEGAL = (Legality.ILLEGAL_SINGLE_CLUSTER, Legality.ILLEGAL_IDENTICAL)

REPLICATE_COLUMNS = (
    "replicate",
    "area",
    "admin1",
    "strategy",
    "level",
    "p_hat",
    "variance",
    "legality",
    "base_legality",
    "n_clusters",
    "true_p",
    "lower",
    "upper",
    "covered",
    "interval_score",
)


@dataclass
class SimulationResults:
    """Scored study output: long metric rows plus raw replicate rows."""

    config: PopulationConfig
    n_replicates: int
    seed: int
    levels: tuple[float, ...]
    strategies: tuple[Strategy, ...]
    truth: dict[str, float] | None  # fixed-population truth, else None
    metrics: list[dict]
    stratum_summary: list[dict]
    replicates: list[tuple]
    replicate_columns: tuple[str, ...] = REPLICATE_COLUMNS


def _replicate_records(
    rep: int,
    cfg: PopulationConfig,
    pop: SyntheticPopulation,
    truth: dict[str, float],
    seed: int,
    strategies: tuple[Strategy, ...],
    levels: tuple[float, ...],
) -> tuple[list[tuple], tuple[StratumDraw, ...]]:
    rng = np.random.default_rng([seed, rep])
    drawn = draw_sample(pop, cfg, rng)
    ds = drawn.dataset
    priors = national_priors(ds)
    base = apply_strategy(ds, Strategy.ALL_UNFIXED, priors=priors)
    by_strategy = {Strategy.ALL_UNFIXED: base}
    for strat in strategies:
        if strat not in by_strategy:
            by_strategy[strat] = apply_strategy(ds, strat, priors=priors)
    records = []
    for area in ds.domain_ids:
        base_legality = base.estimates[area].legality
        p_true = truth[area]
        for strat in strategies:
            est = by_strategy[strat].estimates[area]
            for level in levels:
                ci = _interval_for(est, level)
                records.append(
                    (
                        rep,
                        area,
                        est.admin1_id,
                        strat.value,
                        level,
                        est.p_hat,
                        est.variance,
                        est.legality.value,
                        base_legality.value,
                        est.n_clusters_in_domain,
                        p_true,
                        ci.lower,
                        ci.upper,
                        ci.contains(p_true),
                        interval_score(ci, p_true),
                    )
                )
    return records, drawn.log


def run_study(
    cfg: PopulationConfig,
    reps: int,
    seed: int,
    strategies: tuple[Strategy | str, ...] = (
        Strategy.ALL_UNFIXED,
        Strategy.ALL_FIXED,
        Strategy.MIXED,
    ),
    levels: tuple[float, ...] = (0.8,),
    workers: int | None = None,
) -> SimulationResults:
    """Run a replicated sampling study and score every strategy.

    Replicates are independent; replicate r draws all its randomness from a
    generator keyed by (seed, r), so results do not depend on worker count.
    With fixed_population the population is synthesized once from the
    config's population seed; otherwise each replicate synthesizes a fresh
    population keyed by (population_seed, r) and is scored against its own
    truth.
    """
    if reps < 1:
        raise ValueError("reps must be at least 1")
    strategies = tuple(Strategy(s) for s in strategies)
    levels = tuple(float(l) for l in levels)
    for level in levels:
        if not 0.0 < level < 1.0:
            raise ValueError(f"confidence level must be in (0, 1), got {level}")

    shared_pop = synthesize_population(cfg) if cfg.fixed_population else None
    shared_truth = true_prevalences(shared_pop) if shared_pop is not None else None

    def one(rep: int) -> tuple[list[tuple], tuple[StratumDraw, ...]]:
        if shared_pop is not None:
            pop, truth = shared_pop, shared_truth
        else:
            pop = synthesize_population(cfg, seed=(cfg.population_seed, rep))
            truth = true_prevalences(pop)
        return _replicate_records(rep, cfg, pop, truth, seed, strategies, levels)

    if workers is not None and workers > 1:
        from joblib import Parallel, delayed

        outputs = Parallel(n_jobs=workers)(delayed(one)(r) for r in range(reps))
    else:
        outputs = [one(r) for r in range(reps)]

    records: list[tuple] = []
    draw_logs: list[tuple[StratumDraw, ...]] = []
    for recs, dlog in outputs:
        records.extend(recs)
        draw_logs.append(dlog)

    metrics = _aggregate_metrics(cfg, records, strategies, levels, shared_truth)
    stratum_summary = _aggregate_strata(cfg, records, draw_logs, strategies, levels)
    return SimulationResults(
        config=cfg,
        n_replicates=reps,
        seed=seed,
        levels=levels,
        strategies=strategies,
        truth=shared_truth,
        metrics=metrics,
        stratum_summary=stratum_summary,
        replicates=records,
    )


def _aggregate_metrics(
    cfg: PopulationConfig,
    records: list[tuple],
    strategies: tuple[Strategy, ...],
    levels: tuple[float, ...],
    truth: dict[str, float] | None,
) -> list[dict]:
    """Per (area, strategy, level) averages over replicates with data."""
    admin1_of = {a.area_id: a.admin1_id for a in cfg.areas}
    acc: dict[tuple, dict] = {}
    for row in records:
        (
            rep,
            area,
            _adm,
            strat,
            level,
            p_hat,
            _var,
            _leg,
            base_leg,
            _ncl,
            p_true,
            _lo,
            _hi,
            covered,
            score,
        ) = row
        key = (area, strat, level)
        slot = acc.setdefault(
            key,
            dict(
                s_i=0,
                covered=0,
                width=0.0,
                score=0.0,
                score_legal=0.0,
                n_legal=0,
                score_illegal=0.0,
                n_illegal=0,
                p_sum=0.0,
                err_sum=0.0,
                sq_sum=0.0,
            ),
        )
        slot["s_i"] += 1
        slot["covered"] += int(covered)
        slot["width"] += row[12] - row[11]
        slot["score"] += score
        legal = base_leg == Legality.LEGAL.value
        if legal:
            slot["score_legal"] += score
            slot["n_legal"] += 1
        else:
            slot["score_illegal"] += score
            slot["n_illegal"] += 1
        err = p_hat - p_true
        slot["p_sum"] += p_hat
        slot["err_sum"] += err
        slot["sq_sum"] += err * err

    rows = []
    for area in sorted(admin1_of):
        for strat in strategies:
            for level in levels:
                slot = acc.get((area, strat.value, level))
                if slot is None:
                    rows.append(
                        dict(
                            area=area,
                            admin1=admin1_of[area],
                            strategy=strat.value,
                            level=level,
                            s_i=0,
                            coverage=None,
                            mean_width=None,
                            mean_interval_score=None,
                            mean_score_legal=None,
                            n_legal=0,
                            mean_score_illegal=None,
                            n_illegal=0,
                            mean_p_hat=None,
                            mean_bias=None,
                            rmse=None,
                            true_p=None if truth is None else truth[area],
                        )
                    )
                    continue
                s_i = slot["s_i"]
                rows.append(
                    dict(
                        area=area,
                        admin1=admin1_of[area],
                        strategy=strat.value,
                        level=level,
                        s_i=s_i,
                        coverage=slot["covered"] / s_i,
                        mean_width=slot["width"] / s_i,
                        mean_interval_score=slot["score"] / s_i,
                        mean_score_legal=(
                            slot["score_legal"] / slot["n_legal"]
                            if slot["n_legal"]
                            else None
                        ),
                        n_legal=slot["n_legal"],
                        mean_score_illegal=(
                            slot["score_illegal"] / slot["n_illegal"]
                            if slot["n_illegal"]
                            else None
                        ),
                        n_illegal=slot["n_illegal"],
                        mean_p_hat=slot["p_sum"] / s_i,
                        mean_bias=slot["err_sum"] / s_i,
                        rmse=math.sqrt(slot["sq_sum"] / s_i),
                        true_p=None if truth is None else truth[area],
                    )
                )
    return rows


def _aggregate_strata(
    cfg: PopulationConfig,
    records: list[tuple],
    draw_logs: list[tuple[StratumDraw, ...]],
    strategies: tuple[Strategy, ...],
    levels: tuple[float, ...],
) -> list[dict]:
    """Per (admin1, class) draw diagnostics plus admin1-level score columns.

    The admin1-level columns (illegal percentage, per-strategy mean interval
    score and coverage at the first level) repeat on each class row of that
    admin1.
    """
    realized: dict[tuple[str, str], dict] = {}
    for dlog in draw_logs:
        for sd in dlog:
            key = (sd.admin1_id, sd.urban_rural)
            slot = realized.setdefault(
                key,
                dict(
                    n_planned=sd.n_planned,
                    frame_clusters=sd.frame_clusters,
                    certainty=0,
                    draws=0,
                ),
            )
            slot["certainty"] += sd.n_certainty
            slot["draws"] += 1

    level0 = levels[0]
    by_admin1: dict[str, dict] = {}
    for row in records:
        area, adm, strat, level = row[1], row[2], row[3], row[4]
        if level != level0:
            continue
        slot = by_admin1.setdefault(
            adm,
            {
                "areas": set(),
                "n_obs": 0,
                "n_illegal": 0,
                **{f"score_{s.value}": 0.0 for s in strategies},
                **{f"cover_{s.value}": 0 for s in strategies},
                **{f"count_{s.value}": 0 for s in strategies},
            },
        )
        slot["areas"].add(area)
        if strat == strategies[0].value:
            slot["n_obs"] += 1
            if row[8] != Legality.LEGAL.value:
                slot["n_illegal"] += 1
        slot[f"score_{strat}"] += row[14]
        slot[f"cover_{strat}"] += int(row[13])
        slot[f"count_{strat}"] += 1

    rows = []
    for (adm, cls), slot in sorted(realized.items()):
        a1 = by_admin1.get(adm)
        extra = {}
        if a1 is not None:
            extra["n_areas_observed"] = len(a1["areas"])
            extra["pct_illegal_areas"] = 100.0 * a1["n_illegal"] / a1["n_obs"]
            for s in strategies:
                cnt = a1[f"count_{s.value}"]
                extra[f"mean_interval_score_{s.value}"] = (
                    a1[f"score_{s.value}"] / cnt if cnt else None
                )
                extra[f"coverage_{s.value}"] = (
                    a1[f"cover_{s.value}"] / cnt if cnt else None
                )
        rows.append(
            dict(
                admin1=adm,
                urban_rural=cls,
                n_planned=slot["n_planned"],
                frame_clusters=slot["frame_clusters"],
                mean_certainty_clusters=slot["certainty"] / slot["draws"],
                **extra,
            )
        )
    return rows
