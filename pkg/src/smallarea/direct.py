"""Design-based domain estimation for stratified two-stage cluster samples.

The point estimator is the weighted ratio (Hajek) estimator over a domain's
extended variables. Its design variance is a stratified between-cluster
form computed against the planned stratum structure: clusters of the planned
stratum that fall outside the domain still enter through the stratum total
term, which is what captures the extra randomness of unplanned domains.

A domain variance can be structurally unavailable ("illegal"): a contributing
planned stratum with a single sampled cluster leaves the between-cluster sum
undefined, and a domain whose cluster, stratum, and domain estimates all
coincide yields an exact zero. Both states are classified here and repaired in
the augment module.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .data import ExtendedDataset, StratumBlock

# absolute tolerance for the identical-estimates degeneracy test
IDENTICAL_TOL = 1e-12


class Legality(str, Enum):
    LEGAL = "legal"
    ILLEGAL_SINGLE_CLUSTER = "illegal_single_cluster"
    ILLEGAL_IDENTICAL = "illegal_identical"
    NO_DATA = "no_data"


class NoStratumDataError(ValueError):
    """Requested planned stratum holds no units of the domain."""


@dataclass(frozen=True)
class StratumSummary:
    """One planned stratum's contribution to a domain estimate."""

    admin1_id: str
    urban_rural: str
    n_clusters: int  # sampled clusters in the planned stratum
    n_clusters_in_domain: int
    weight_total: float
    p_hat: float
    q_share: float  # share of the domain's total weight
    cluster_weights: np.ndarray
    cluster_means: np.ndarray


@dataclass(frozen=True)
class DomainEstimate:
    domain_id: str
    admin1_id: str | None
    p_hat: float | None
    variance: float | None
    legality: Legality
    n_clusters_in_domain: int
    method: str = "hajek"

    @property
    def se(self) -> float | None:
        if self.variance is None:
            return None
        return float(np.sqrt(self.variance))

    @property
    def cv(self) -> float | None:
        if self.variance is None or self.p_hat is None or self.p_hat <= 0:
            return None
        return float(np.sqrt(self.variance) / self.p_hat)


def _domain_totals(blocks: tuple[StratumBlock, ...]) -> tuple[float, float]:
    v = sum(float(b.weight_totals.sum()) for b in blocks)
    u = sum(float(b.weighted_events.sum()) for b in blocks)
    return u, v


def hajek_domain(ext: ExtendedDataset) -> DomainEstimate:
    """Pooled weighted-ratio estimate of the domain prevalence."""
    legality = classify_legality(ext)
    if legality is Legality.NO_DATA:
        return DomainEstimate(
            domain_id=ext.domain_id,
            admin1_id=None,
            p_hat=None,
            variance=None,
            legality=legality,
            n_clusters_in_domain=0,
        )
    u, v = _domain_totals(ext.blocks)
    return DomainEstimate(
        domain_id=ext.domain_id,
        admin1_id=ext.admin1_id,
        p_hat=u / v,
        variance=None,
        legality=legality,
        n_clusters_in_domain=ext.n_clusters_in_domain,
    )


def hajek_stratum(ext: ExtendedDataset, admin1_id: str, urban_rural: str) -> StratumSummary:
    """Within-stratum ratio estimate and its share of the domain weight."""
    for block in ext.blocks:
        if block.admin1_id == admin1_id and block.urban_rural == urban_rural:
            break
    else:
        raise NoStratumDataError(
            f"domain {ext.domain_id!r} has no units in stratum "
            f"({admin1_id!r}, {urban_rural!r})"
        )
    _, v_domain = _domain_totals(ext.blocks)
    v = float(block.weight_totals.sum())
    u = float(block.weighted_events.sum())
    return StratumSummary(
        admin1_id=admin1_id,
        urban_rural=urban_rural,
        n_clusters=block.n_planned,
        n_clusters_in_domain=block.cluster_ids.shape[0],
        weight_total=v,
        p_hat=u / v,
        q_share=v / v_domain,
        cluster_weights=block.weight_totals.copy(),
        cluster_means=block.weighted_events / block.weight_totals,
    )


def classify_legality(ext: ExtendedDataset, tol: float = IDENTICAL_TOL) -> Legality:
    """Decide whether the domain's design variance is structurally available.

    Precedence: no data, then a single-cluster contributing stratum, then the
    identical-estimates degeneracy (all cluster, stratum, and domain estimates
    equal, which zeroes every term of the variance).
    """
    if ext.no_data:
        return Legality.NO_DATA
    if any(b.n_planned == 1 for b in ext.blocks):
        return Legality.ILLEGAL_SINGLE_CLUSTER
    u, v = _domain_totals(ext.blocks)
    p_domain = u / v
    for block in ext.blocks:
        p_stratum = float(block.weighted_events.sum()) / float(
            block.weight_totals.sum()
        )
        if abs(p_stratum - p_domain) > tol:
            return Legality.LEGAL
        cluster_means = block.weighted_events / block.weight_totals
        if np.any(np.abs(cluster_means - p_domain) > tol):
            return Legality.LEGAL
    return Legality.ILLEGAL_IDENTICAL


def _squared_term_sum(
    weight_totals: np.ndarray,
    weighted_events: np.ndarray,
    n_planned: int,
    p_domain: float,
) -> float:
    """Stratum sum of squared centered cluster terms.

    Clusters of the planned stratum outside the domain have zero extended
    totals; each contributes the squared stratum-centering term, so only
    their count is needed.
    """
    v_tot = float(weight_totals.sum())
    u_tot = float(weighted_events.sum())
    stratum_dev = (u_tot - p_domain * v_tot) / n_planned
    centered = (weighted_events - p_domain * weight_totals) - stratum_dev
    n_out = n_planned - weight_totals.shape[0]
    return float(centered @ centered) + n_out * stratum_dev * stratum_dev


def variance_domain(ext: ExtendedDataset) -> DomainEstimate:
    """Hajek estimate with its stratified between-cluster design variance.

    Illegal cases never raise: a single-cluster stratum yields variance None,
    the identical-estimates degeneracy yields an exact 0.0, both flagged.
    """
    legality = classify_legality(ext)
    if legality is Legality.NO_DATA:
        return hajek_domain(ext)
    u, v = _domain_totals(ext.blocks)
    p_domain = u / v
    base = dict(
        domain_id=ext.domain_id,
        admin1_id=ext.admin1_id,
        p_hat=p_domain,
        legality=legality,
        n_clusters_in_domain=ext.n_clusters_in_domain,
    )
    if legality is Legality.ILLEGAL_SINGLE_CLUSTER:
        return DomainEstimate(variance=None, **base)
    if legality is Legality.ILLEGAL_IDENTICAL:
        return DomainEstimate(variance=0.0, **base)
    total = 0.0
    for block in ext.blocks:
        n = block.n_planned
        total += (
            n
            / (n - 1)
            * _squared_term_sum(
                block.weight_totals, block.weighted_events, n, p_domain
            )
        )
    return DomainEstimate(variance=total / v**2, **base)


@dataclass(frozen=True)
class VarianceDecomposition:
    """Split of each stratum's variance sum into in-domain and out-of-domain
    cluster contributions (raw bracket sums, before the n/(n-1) and 1/v^2
    scaling)."""

    a_terms: dict[tuple[str, str], float]
    b_terms: dict[tuple[str, str], float]
    total: float


def variance_decomposition(ext: ExtendedDataset) -> VarianceDecomposition:
    """Recompute the domain variance via explicit per-cluster ratio terms.

    This is an intentionally independent arithmetic path from
    variance_domain (ratios instead of weighted residuals); the two must
    agree to floating-point accuracy on legal domains.
    """
    legality = classify_legality(ext)
    if legality is Legality.NO_DATA:
        raise ValueError(f"domain {ext.domain_id!r} has no data")
    if legality is Legality.ILLEGAL_SINGLE_CLUSTER:
        raise ValueError(
            f"domain {ext.domain_id!r} has a single-cluster stratum; "
            "variance undefined"
        )
    u, v = _domain_totals(ext.blocks)
    p_domain = u / v
    a_terms: dict[tuple[str, str], float] = {}
    b_terms: dict[tuple[str, str], float] = {}
    total = 0.0
    for block in ext.blocks:
        n = block.n_planned
        v_stratum = float(block.weight_totals.sum())
        p_stratum = float(block.weighted_events.sum()) / v_stratum
        cluster_means = block.weighted_events / block.weight_totals
        bracket = block.weight_totals * (cluster_means - p_domain) - (
            v_stratum * (p_stratum - p_domain) / n
        )
        a = float(bracket @ bracket)
        n_out = n - block.cluster_ids.shape[0]
        b = n_out * (v_stratum * (p_stratum - p_domain) / n) ** 2
        key = (block.admin1_id, block.urban_rural)
        a_terms[key] = a
        b_terms[key] = b
        total += n / (n - 1) * (a + b)
    return VarianceDecomposition(a_terms=a_terms, b_terms=b_terms, total=total / v**2)


def jackknife_variance(ext: ExtendedDataset) -> float:
    """Stratified delete-one-cluster jackknife of the domain ratio.

    Deleting a cluster in stratum h reweights the remaining clusters of h by
    n_h / (n_h - 1). Out-of-domain clusters of contributing strata must be
    deleted too; all such deletions within a stratum produce the same
    replicate, so it is computed once and counted n_out times.
    """
    if ext.no_data:
        raise ValueError(f"domain {ext.domain_id!r} has no data")
    if any(b.n_planned < 2 for b in ext.blocks):
        raise ValueError(
            f"domain {ext.domain_id!r} has a single-cluster stratum; "
            "jackknife undefined"
        )
    u_total, v_total = _domain_totals(ext.blocks)
    p_full = u_total / v_total
    out = 0.0
    for block in ext.blocks:
        n = block.n_planned
        factor = n / (n - 1)
        u_stratum = float(block.weighted_events.sum())
        v_stratum = float(block.weight_totals.sum())
        devs = []
        for c in range(block.cluster_ids.shape[0]):
            u_rep = u_total - u_stratum + factor * (u_stratum - block.weighted_events[c])
            v_rep = v_total - v_stratum + factor * (v_stratum - block.weight_totals[c])
            if v_rep == 0.0:
                raise ValueError(
                    "jackknife replicate lost all domain weight; domain is "
                    "degenerate"
                )
            devs.append(u_rep / v_rep - p_full)
        n_out = n - block.cluster_ids.shape[0]
        if n_out > 0:
            u_rep = u_total - u_stratum + factor * u_stratum
            v_rep = v_total - v_stratum + factor * v_stratum
            dev_out = u_rep / v_rep - p_full
        else:
            dev_out = 0.0
        dev_arr = np.asarray(devs, dtype=np.float64)
        out += (n - 1) / n * (float(dev_arr @ dev_arr) + n_out * dev_out * dev_out)
    return out
