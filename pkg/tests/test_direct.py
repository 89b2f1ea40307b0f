import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smallarea.data import SurveyDataset, extend_domain
from smallarea.direct import (
    Legality,
    classify_legality,
    hajek_domain,
    hajek_stratum,
    jackknife_variance,
    variance_decomposition,
    variance_domain,
)

from conftest import survey_from_clusters, survey_strategy


def planned_two_cluster_survey():
    # one planned stratum, two clusters of two equal-weight units
    return survey_from_clusters(
        [
            ("a1", "rural", "c1", "d1", 1.0, 2, 1),
            ("a1", "rural", "c2", "d1", 1.0, 2, 0),
        ]
    )


def two_stratum_survey():
    # domain d1 spans both classes; each stratum has an out-of-domain cluster
    return survey_from_clusters(
        [
            ("a1", "rural", "A", "d1", 1.0, 1, 1),
            ("a1", "rural", "B", "d1", 1.0, 1, 0),
            ("a1", "rural", "C", "d2", 1.0, 1, 0),
            ("a1", "urban", "D", "d1", 2.0, 1, 1),
            ("a1", "urban", "E", "d2", 1.0, 1, 0),
        ]
    )


def test_hajek_planned_domain_point_estimate():
    est = hajek_domain(extend_domain(planned_two_cluster_survey(), "d1"))
    assert est.p_hat == pytest.approx(0.25, abs=1e-15)
    assert est.n_clusters_in_domain == 2


def test_variance_planned_two_clusters_hand_value():
    # u - p*v is (0.5, -0.5) per cluster and the stratum term vanishes,
    # so the variance is 2/1 * 0.5 / 16 = 1/16
    est = variance_domain(extend_domain(planned_two_cluster_survey(), "d1"))
    assert est.legality is Legality.LEGAL
    assert est.variance == pytest.approx(1.0 / 16.0, rel=1e-14)


def test_variance_two_stratum_hand_value():
    # p_hat = 3/4; rural terms 5/12, -7/12 plus one out-cluster (1/6)^2,
    # urban term 1/4 plus out-cluster (1/4)^2; total 17/256
    est = variance_domain(extend_domain(two_stratum_survey(), "d1"))
    assert est.p_hat == pytest.approx(0.75, abs=1e-15)
    assert est.legality is Legality.LEGAL
    assert est.variance == pytest.approx(17.0 / 256.0, rel=1e-14)


def test_decomposition_two_stratum_hand_split():
    dec = variance_decomposition(extend_domain(two_stratum_survey(), "d1"))
    assert dec.a_terms[("a1", "rural")] == pytest.approx(74.0 / 144.0, rel=1e-12)
    assert dec.b_terms[("a1", "rural")] == pytest.approx(1.0 / 36.0, rel=1e-12)
    assert dec.b_terms[("a1", "urban")] == pytest.approx(1.0 / 16.0, rel=1e-12)
    assert dec.total == pytest.approx(17.0 / 256.0, rel=1e-12)


def test_b_term_zero_when_stratum_mean_matches_domain():
    # single-stratum domain: the stratum estimate is the domain estimate,
    # so every out-of-domain cluster contribution vanishes
    data = survey_from_clusters(
        [
            ("a1", "rural", "A", "d1", 1.0, 1, 1),
            ("a1", "rural", "B", "d1", 1.0, 1, 0),
            ("a1", "rural", "C", "d2", 1.0, 1, 1),
        ]
    )
    dec = variance_decomposition(extend_domain(data, "d1"))
    assert dec.b_terms[("a1", "rural")] == pytest.approx(0.0, abs=1e-18)
    est = variance_domain(extend_domain(data, "d1"))
    assert est.variance == pytest.approx(3.0 / 2.0 * 0.5 / 4.0, rel=1e-14)


def test_jackknife_two_cluster_exact_match():
    ext = extend_domain(planned_two_cluster_survey(), "d1")
    assert jackknife_variance(ext) == pytest.approx(1.0 / 16.0, rel=1e-14)


def test_jackknife_identical_means_is_zero():
    data = survey_from_clusters(
        [
            ("a1", "rural", "c1", "d1", 1.0, 10, 1),
            ("a1", "rural", "c2", "d1", 2.0, 10, 1),
        ]
    )
    assert jackknife_variance(extend_domain(data, "d1")) == pytest.approx(0.0, abs=1e-18)


def test_jackknife_requires_two_clusters_per_stratum():
    data = survey_from_clusters([("a1", "rural", "c1", "d1", 1.0, 5, 2)])
    with pytest.raises(ValueError, match="single-cluster"):
        jackknife_variance(extend_domain(data, "d1"))


def test_hajek_stratum_summary():
    s = hajek_stratum(extend_domain(two_stratum_survey(), "d1"), "a1", "rural")
    assert s.p_hat == pytest.approx(0.5, abs=1e-15)
    assert s.n_clusters == 3  # planned stratum size
    assert s.n_clusters_in_domain == 2
    assert s.q_share == pytest.approx(0.5, abs=1e-15)  # rural share of weight


def test_legality_no_data():
    data = planned_two_cluster_survey()
    ext = extend_domain(data, "ghost", allow_missing=True)
    assert classify_legality(ext) is Legality.NO_DATA
    est = variance_domain(ext)
    assert est.p_hat is None and est.variance is None
    assert est.legality is Legality.NO_DATA


def test_legality_single_cluster_stratum():
    data = survey_from_clusters(
        [
            ("a1", "rural", "c1", "d1", 1.0, 5, 2),
            ("a1", "urban", "c2", "d1", 1.0, 5, 1),
            ("a1", "urban", "c3", "d1", 1.0, 5, 4),
        ]
    )
    ext = extend_domain(data, "d1")
    assert classify_legality(ext) is Legality.ILLEGAL_SINGLE_CLUSTER
    est = variance_domain(ext)
    assert est.variance is None
    assert est.p_hat is not None


def test_legality_one_cluster_inside_multi_cluster_stratum():
    data = survey_from_clusters(
        [
            ("a1", "rural", "c1", "d1", 1.0, 5, 2),
            ("a1", "rural", "c2", "d2", 1.0, 5, 1),
        ]
    )
    ext = extend_domain(data, "d1")
    assert classify_legality(ext) is Legality.ILLEGAL_IDENTICAL
    assert variance_domain(ext).variance == 0.0


def test_legality_identical_means_multi_cluster():
    data = survey_from_clusters(
        [
            ("a1", "rural", "c1", "d1", 1.0, 10, 1),
            ("a1", "rural", "c2", "d1", 3.0, 20, 2),
        ]
    )
    ext = extend_domain(data, "d1")
    assert classify_legality(ext) is Legality.ILLEGAL_IDENTICAL
    assert variance_domain(ext).variance == 0.0


def test_legality_single_cluster_takes_precedence_over_identical():
    data = survey_from_clusters(
        [
            ("a1", "rural", "c1", "d1", 1.0, 10, 0),
            ("a1", "urban", "c2", "d1", 1.0, 10, 0),
            ("a1", "urban", "c3", "d1", 1.0, 10, 0),
        ]
    )
    ext = extend_domain(data, "d1")
    assert classify_legality(ext) is Legality.ILLEGAL_SINGLE_CLUSTER


def test_decomposition_rejects_undefined_cases():
    data = survey_from_clusters([("a1", "rural", "c1", "d1", 1.0, 5, 2)])
    with pytest.raises(ValueError, match="single-cluster"):
        variance_decomposition(extend_domain(data, "d1"))
    with pytest.raises(ValueError, match="no data"):
        variance_decomposition(extend_domain(data, "ghost", allow_missing=True))


# --- properties -------------------------------------------------------------


@settings(max_examples=150, deadline=None)
@given(survey_strategy(), st.floats(1e-3, 1e3, allow_nan=False))
def test_weight_scale_invariance(data, scale):
    scaled = SurveyDataset(
        admin1=data.admin1,
        urban_rural=data.urban_rural,
        cluster=data.cluster,
        domain=data.domain,
        weight=data.weight * scale,
        outcome=data.outcome,
        unit_id=data.unit_id,
        _validated=True,
    )
    for d in data.domain_ids:
        a = variance_domain(extend_domain(data, d))
        b = variance_domain(extend_domain(scaled, d))
        assert a.legality is b.legality
        assert b.p_hat == pytest.approx(a.p_hat, rel=1e-12, abs=1e-12)
        if a.variance is None:
            assert b.variance is None
        else:
            assert b.variance == pytest.approx(a.variance, rel=1e-9, abs=1e-15)


@settings(max_examples=150, deadline=None)
@given(survey_strategy())
def test_decomposition_matches_variance(data):
    for d in data.domain_ids:
        ext = extend_domain(data, d)
        est = variance_domain(ext)
        if est.legality in (Legality.NO_DATA, Legality.ILLEGAL_SINGLE_CLUSTER):
            continue
        dec = variance_decomposition(ext)
        assert dec.total == pytest.approx(est.variance, rel=1e-12, abs=1e-15)


@settings(max_examples=150, deadline=None)
@given(survey_strategy())
def test_zero_variance_implies_illegal(data):
    for d in data.domain_ids:
        est = variance_domain(extend_domain(data, d))
        if est.variance == 0.0:
            assert est.legality in (
                Legality.ILLEGAL_IDENTICAL,
                Legality.ILLEGAL_SINGLE_CLUSTER,
            )
        if est.legality is Legality.LEGAL:
            assert est.variance > 0.0


@settings(max_examples=150, deadline=None)
@given(survey_strategy())
def test_hajek_equals_pooled_weighted_ratio(data):
    for d in data.domain_ids:
        ext = extend_domain(data, d)
        v = ext.v.sum()
        expected = float((ext.v * ext.z).sum() / v)
        assert hajek_domain(ext).p_hat == pytest.approx(expected, rel=1e-12)


@settings(max_examples=60, deadline=None)
@given(survey_strategy(max_admin1=1, min_clusters=2))
def test_planned_single_stratum_matches_classic_form(data):
    """For a domain that is a whole single-class stratum, the variance
    reduces to n/(n-1) * sum((u_c - p*v_c)^2) / v^2."""
    table = data.clusters
    for (a, u), n in table.stratum_sizes.items():
        sel = (table.admin1 == a) & (table.urban_rural == u)
        doms = set(table.domain[sel].tolist())
        if len(doms) != 1 or n < 2:
            continue
        d = doms.pop()
        if not np.array_equal(sel, table.domain == d):
            continue  # domain also spans another stratum
        ext = extend_domain(data, d)
        est = variance_domain(ext)
        if est.legality is not Legality.LEGAL:
            continue
        wt = table.weight_total[sel]
        we = table.weighted_events[sel]
        p = we.sum() / wt.sum()
        resid = we - p * wt
        classic = n / (n - 1) * float(resid @ resid) / float(wt.sum()) ** 2
        assert est.variance == pytest.approx(classic, rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(survey_strategy(min_clusters=2, max_clusters=6, max_units=6))
def test_jackknife_nonnegative_and_finite_on_legal_domains(data):
    """Always holds on small samples; tight agreement with the closed form
    is an asymptotic statement covered by the acceptance suite."""
    for d in data.domain_ids:
        ext = extend_domain(data, d)
        est = variance_domain(ext)
        if est.legality is not Legality.LEGAL:
            continue
        jk = jackknife_variance(ext)
        assert np.isfinite(jk) and jk >= 0.0
