"""Shared builders for survey test data."""
from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest
from hypothesis import strategies as st

from smallarea.data import ClusterAggregate, SurveyDataset

DATA_DIR = Path(__file__).parent / "data"
REPLICA_CSV = DATA_DIR / "zambia_admin2_replica.csv"


def survey_from_clusters(rows) -> SurveyDataset:
    """Build a dataset from (admin1, class, cluster, domain, weight, n, events)
    tuples; weight is shared by all units of the cluster."""
    records = []
    for admin1, cls, cluster, domain, weight, n, events in rows:
        agg = ClusterAggregate(
            admin1_id=admin1,
            urban_rural=cls,
            cluster_id=str(cluster),
            domain_id=domain,
            weight=float(weight),
            n_trials=int(n),
            events=int(events),
        )
        records.extend(agg.expand())
    return SurveyDataset.from_records(records)


@pytest.fixture(scope="session")
def replica() -> SurveyDataset:
    from smallarea.data import load_survey

    return load_survey(REPLICA_CSV, schema="cluster")


@st.composite
def survey_strategy(
    draw,
    max_admin1: int = 3,
    max_clusters: int = 5,
    max_units: int = 4,
    min_clusters: int = 1,
):
    """Random small survey: variable strata, domains nested in admin1."""
    rows = []
    n_admin1 = draw(st.integers(1, max_admin1))
    for a in range(n_admin1):
        admin1 = f"a{a}"
        classes = draw(
            st.sampled_from([("rural",), ("urban",), ("rural", "urban")])
        )
        n_domains = draw(st.integers(1, 3))
        for cls in classes:
            n_clusters = draw(st.integers(min_clusters, max_clusters))
            for c in range(n_clusters):
                domain = f"d{a}_{draw(st.integers(0, n_domains - 1))}"
                n_units = draw(st.integers(1, max_units))
                events = draw(st.integers(0, n_units))
                weight = draw(
                    st.floats(
                        0.1, 50.0, allow_nan=False, allow_infinity=False
                    )
                )
                rows.append(
                    (admin1, cls, f"{admin1}:{cls}:{c}", domain, weight, n_units, events)
                )
    return survey_from_clusters(rows)


def random_survey(rng: np.random.Generator, n_admin1=2, clusters_per_stratum=12):
    """Dense random survey with every stratum at least clusters_per_stratum
    clusters; domains nest inside admin1 and span both classes."""
    rows = []
    for a in range(n_admin1):
        admin1 = f"a{a}"
        n_domains = int(rng.integers(2, 5))
        p_true = rng.uniform(0.05, 0.6, size=n_domains)
        for cls in ("rural", "urban"):
            n_clusters = int(rng.integers(clusters_per_stratum, clusters_per_stratum + 5))
            for c in range(n_clusters):
                d = int(rng.integers(0, n_domains))
                n_units = int(rng.integers(5, 20))
                events = int(rng.binomial(n_units, p_true[d]))
                weight = float(np.exp(rng.normal(3.0, 0.5)))
                rows.append(
                    (admin1, cls, f"{admin1}:{cls}:{c}", f"d{a}_{d}", weight, n_units, events)
                )
    return survey_from_clusters(rows)
