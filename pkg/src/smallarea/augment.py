"""Variance repair by phantom-cluster augmentation.

A domain whose design variance is structurally unavailable is repaired by
injecting one synthetic "phantom" cluster per affected planned stratum. The
phantom behaves as a cluster-level pseudo-observation: its cluster estimate is
a national prior mean for the stratum class (urban/rural) and its weight total
is the national average per-cluster weight total for that class. The
augmented estimate is then the usual pooled ratio over real plus phantom
clusters, and the augmented variance is the same stratified between-cluster
form with the planned cluster counts increased by the phantom counts.

Three whole-survey strategies are provided: repair nothing, repair only
domains flagged illegal, or add phantoms everywhere a domain has data.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .data import ExtendedDataset, StratumBlock, SurveyDataset, extend_domain
from .direct import (
    DomainEstimate,
    Legality,
    _squared_term_sum,
    classify_legality,
    variance_domain,
)


class AugmentationError(RuntimeError):
    """Raised when phantom augmentation cannot produce a usable variance."""


@dataclass(frozen=True)
class PhantomPrior:
    """National prior for one stratum class."""

    urban_rural: str
    mean: float
    weight: float  # average per-cluster weight total


@dataclass(frozen=True)
class PhantomCluster:
    """One injected pseudo-cluster."""

    domain_id: str
    admin1_id: str
    urban_rural: str
    mean: float
    weight: float

    @property
    def cluster_id(self) -> str:
        # namespaced so it can never collide with a real cluster id
        return f"phantom:{self.domain_id}:{self.urban_rural}"


class Strategy(str, Enum):
    ALL_UNFIXED = "all_unfixed"
    ALL_FIXED = "all_fixed"
    MIXED = "mixed"


def national_stratum_prior(data: SurveyDataset, urban_rural: str) -> PhantomPrior:
    """National prior for a stratum class, pooled over every admin1 area.

    The prior mean is the national weighted-ratio estimate over all units of
    the class; the prior weight is the mean over the class's clusters of
    their per-cluster weight totals.
    """
    table = data.clusters
    sel = table.urban_rural == urban_rural
    if not sel.any():
        raise ValueError(f"no sampled clusters in class {urban_rural!r}")
    weight_totals = table.weight_total[sel]
    weighted_events = table.weighted_events[sel]
    return PhantomPrior(
        urban_rural=urban_rural,
        mean=float(weighted_events.sum() / weight_totals.sum()),
        weight=float(weight_totals.mean()),
    )


def national_priors(data: SurveyDataset) -> dict[str, PhantomPrior]:
    """Priors for every stratum class present in the data."""
    classes = sorted(set(data.clusters.urban_rural.tolist()))
    return {u: national_stratum_prior(data, u) for u in classes}


def _phantoms_for_blocks(
    ext: ExtendedDataset,
    blocks: tuple[StratumBlock, ...],
    priors: dict[str, PhantomPrior],
) -> tuple[PhantomCluster, ...]:
    phantoms = []
    for block in blocks:
        prior = priors.get(block.urban_rural)
        if prior is None:
            raise ValueError(
                f"no phantom prior for class {block.urban_rural!r}; "
                "supply one explicitly"
            )
        phantoms.append(
            PhantomCluster(
                domain_id=ext.domain_id,
                admin1_id=block.admin1_id,
                urban_rural=block.urban_rural,
                mean=prior.mean,
                weight=prior.weight,
            )
        )
    return tuple(phantoms)


def build_phantom_clusters(
    ext: ExtendedDataset,
    legality: Legality,
    priors: dict[str, PhantomPrior],
) -> tuple[PhantomCluster, ...]:
    """Phantoms required to repair one illegal domain.

    Single-cluster repair targets only the contributing strata whose planned
    cluster count is 1; identical-estimates repair targets every contributing
    stratum (the degeneracy necessarily holds in each of them).
    """
    if legality is Legality.ILLEGAL_SINGLE_CLUSTER:
        targets = tuple(b for b in ext.blocks if b.n_planned == 1)
    elif legality is Legality.ILLEGAL_IDENTICAL:
        targets = ext.blocks
    else:
        raise ValueError(
            f"domain {ext.domain_id!r} is {legality.value}; nothing to repair"
        )
    return _phantoms_for_blocks(ext, targets, priors)


def _augmented_blocks(
    ext: ExtendedDataset, phantoms: tuple[PhantomCluster, ...]
) -> list[tuple[int, np.ndarray, np.ndarray]]:
    """Per-stratum (augmented planned count, weight totals, weighted events)."""
    by_stratum: dict[tuple[str, str], list[PhantomCluster]] = {}
    for ph in phantoms:
        by_stratum.setdefault((ph.admin1_id, ph.urban_rural), []).append(ph)
    known = {(b.admin1_id, b.urban_rural) for b in ext.blocks}
    stray = set(by_stratum) - known
    if stray:
        raise ValueError(
            f"phantom targets stratum {sorted(stray)[0]} where domain "
            f"{ext.domain_id!r} has no data"
        )
    out = []
    for block in ext.blocks:
        extra = by_stratum.get((block.admin1_id, block.urban_rural), [])
        weights = np.concatenate(
            [block.weight_totals, np.array([p.weight for p in extra])]
        )
        events = np.concatenate(
            [block.weighted_events, np.array([p.weight * p.mean for p in extra])]
        )
        out.append((block.n_planned + len(extra), weights, events))
    return out


def augmented_estimate(
    ext: ExtendedDataset, phantoms: tuple[PhantomCluster, ...]
) -> DomainEstimate:
    """Pooled ratio over real and phantom clusters.

    Within each stratum this is a convex combination of the real ratio and
    the phantom prior mean, weighted by their weight totals.
    """
    if ext.no_data:
        raise ValueError(f"domain {ext.domain_id!r} has no data to augment")
    blocks = _augmented_blocks(ext, phantoms)
    v = sum(float(w.sum()) for _, w, _ in blocks)
    u = sum(float(e.sum()) for _, _, e in blocks)
    return DomainEstimate(
        domain_id=ext.domain_id,
        admin1_id=ext.admin1_id,
        p_hat=u / v,
        variance=None,
        legality=classify_legality(ext),
        n_clusters_in_domain=ext.n_clusters_in_domain,
        method="augmented",
    )


def augmented_variance(
    ext: ExtendedDataset, phantoms: tuple[PhantomCluster, ...]
) -> DomainEstimate:
    """Augmented estimate with the between-cluster variance over real plus
    phantom clusters. With an empty phantom set this is exactly the unrepaired
    variance (same code path as variance_domain's kernel)."""
    if ext.no_data:
        raise ValueError(f"domain {ext.domain_id!r} has no data to augment")
    blocks = _augmented_blocks(ext, phantoms)
    v = sum(float(w.sum()) for _, w, _ in blocks)
    u = sum(float(e.sum()) for _, _, e in blocks)
    p_domain = u / v
    total = 0.0
    for n_aug, weights, events in blocks:
        if n_aug < 2:
            raise AugmentationError(
                f"domain {ext.domain_id!r}: stratum still has a single cluster "
                "after augmentation; add a phantom or supply a prior override"
            )
        total += n_aug / (n_aug - 1) * _squared_term_sum(weights, events, n_aug, p_domain)
    variance = total / v**2
    if phantoms and variance == 0.0:
        raise AugmentationError(
            f"domain {ext.domain_id!r}: variance is still degenerate after "
            "augmentation (phantom mean equals every real estimate); override "
            "the phantom prior"
        )
    return DomainEstimate(
        domain_id=ext.domain_id,
        admin1_id=ext.admin1_id,
        p_hat=p_domain,
        variance=variance,
        legality=Legality.LEGAL if phantoms else classify_legality(ext),
        n_clusters_in_domain=ext.n_clusters_in_domain,
        method="augmented",
    )


@dataclass
class StrategyResult:
    strategy: Strategy
    estimates: dict[str, DomainEstimate]
    phantoms: dict[str, tuple[PhantomCluster, ...]]
    priors: dict[str, PhantomPrior]


def apply_strategy(
    data: SurveyDataset,
    strategy: Strategy | str,
    priors: dict[str, PhantomPrior] | None = None,
    domains: tuple[str, ...] | None = None,
) -> StrategyResult:
    """Estimate every domain under one repair strategy.

    all_unfixed reports raw estimates with their legality flags; mixed
    repairs only illegal domains; all_fixed adds one phantom to every
    stratum in which a domain has at least one real cluster. Domains with no
    data are never repaired (they are the smoother's job downstream).
    """
    strategy = Strategy(strategy)
    if priors is None:
        priors = national_priors(data)
    if domains is None:
        domains = data.domain_ids
    estimates: dict[str, DomainEstimate] = {}
    phantom_log: dict[str, tuple[PhantomCluster, ...]] = {}
    for domain_id in domains:
        ext = extend_domain(data, domain_id, allow_missing=True)
        legality = classify_legality(ext)
        if legality is Legality.NO_DATA:
            estimates[domain_id] = variance_domain(ext)
            continue
        if strategy is Strategy.ALL_UNFIXED:
            estimates[domain_id] = variance_domain(ext)
        elif strategy is Strategy.MIXED:
            if legality is Legality.LEGAL:
                estimates[domain_id] = variance_domain(ext)
            else:
                phantoms = build_phantom_clusters(ext, legality, priors)
                estimates[domain_id] = augmented_variance(ext, phantoms)
                phantom_log[domain_id] = phantoms
        else:  # all_fixed
            phantoms = _phantoms_for_blocks(ext, ext.blocks, priors)
            estimates[domain_id] = augmented_variance(ext, phantoms)
            phantom_log[domain_id] = phantoms
    return StrategyResult(
        strategy=strategy, estimates=estimates, phantoms=phantom_log, priors=priors
    )
