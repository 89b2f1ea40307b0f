"""Population-share aggregation of area estimates to admin1 and national."""
import numpy as np
import pytest
from scipy.special import expit, logit

from conftest import survey_from_clusters
from smallarea.aggregate import (
    AggregationError,
    AggregationFractions,
    aggregate_admin1,
    aggregate_national,
    design_weight_fractions,
    load_population_fractions,
    national_from_areas,
)
from smallarea.augment import apply_strategy
from smallarea.fay_herriot import FHFit


def make_fractions():
    return AggregationFractions(
        source="external_population",
        within_admin1={
            "p1": {"a1": 0.75, "a2": 0.25},
            "p2": {"b1": 1.0},
        },
        national={"p1": 0.4, "p2": 0.6},
    )


def make_fit(area_ids, draws, admin1=None):
    draws = np.asarray(draws, dtype=np.float64)
    return FHFit(
        model="iid_eb",
        nested=False,
        area_ids=tuple(area_ids),
        admin1_ids=tuple(admin1 or [None] * len(area_ids)),
        missing=np.zeros(len(area_ids), dtype=bool),
        theta_draws=logit(draws),
    )


def test_fraction_validation():
    make_fractions()
    with pytest.raises(AggregationError, match="unknown fraction source"):
        AggregationFractions("census", {"p1": {"a1": 1.0}}, {"p1": 1.0})
    with pytest.raises(AggregationError, match="sum to 1"):
        AggregationFractions(
            "design_weights", {"p1": {"a1": 1.0}}, {"p1": 0.9, "p2": 0.2}
        )
    with pytest.raises(AggregationError, match="must sum to 1"):
        AggregationFractions(
            "design_weights",
            {"p1": {"a1": 0.5, "a2": 0.4}},
            {"p1": 1.0},
        )
    with pytest.raises(AggregationError, match="missing a national share"):
        AggregationFractions("design_weights", {"p9": {"a1": 1.0}}, {"p1": 1.0})
    with pytest.raises(AggregationError, match="negative"):
        AggregationFractions(
            "design_weights", {"p1": {"a1": 1.5, "a2": -0.5}}, {"p1": 1.0}
        )
    # a hair inside the tolerance passes
    AggregationFractions(
        "design_weights",
        {"p1": {"a1": 0.5 + 2e-10, "a2": 0.5}},
        {"p1": 1.0 - 2e-10},
    )


def test_fraction_lookups():
    fr = make_fractions()
    assert fr.area_ids == ("a1", "a2", "b1")
    assert fr.admin1_of("b1") == "p2"
    with pytest.raises(KeyError):
        fr.admin1_of("zz")
    assert fr.national_share_of_area("a1") == pytest.approx(0.3)
    assert fr.national_share_of_area("b1") == pytest.approx(0.6)


def test_design_weight_fractions_from_survey():
    # weight totals: a1 = 2*6=12 and 1*6=6, a2 = 3*6=18, b1 = 6*6=36
    ds = survey_from_clusters(
        [
            ("p1", "rural", "c1", "a1", 2.0, 6, 1),
            ("p1", "rural", "c2", "a1", 1.0, 6, 2),
            ("p1", "rural", "c3", "a2", 3.0, 6, 0),
            ("p2", "urban", "c4", "b1", 6.0, 6, 3),
        ]
    )
    fr = design_weight_fractions(ds)
    assert fr.source == "design_weights"
    assert fr.within_admin1["p1"]["a1"] == pytest.approx(18 / 36)
    assert fr.within_admin1["p1"]["a2"] == pytest.approx(18 / 36)
    assert fr.national["p1"] == pytest.approx(36 / 72)
    assert fr.national["p2"] == pytest.approx(36 / 72)


def test_load_population_fractions(tmp_path):
    f = tmp_path / "pop.csv"
    f.write_text(
        "area_id,admin1_id,population\n"
        "a1,p1,3000\n"
        "a2,p1,1000\n"
        "b1,p2,6000\n"
    )
    fr = load_population_fractions(f)
    assert fr.source == "external_population"
    assert fr.within_admin1["p1"]["a1"] == pytest.approx(0.75)
    assert fr.national["p2"] == pytest.approx(0.6)

    g = tmp_path / "pop_classes.csv"
    g.write_text(
        "area_id,admin1_id,pop_rural,pop_urban\n"
        "a1,p1,2000,1000\n"
        "a2,p1,1000,0\n"
        "b1,p2,0,6000\n"
    )
    fr2 = load_population_fractions(g)
    assert fr2.within_admin1["p1"]["a1"] == pytest.approx(0.75)
    assert fr2.national == pytest.approx(fr.national)


def test_load_population_fractions_errors(tmp_path):
    with pytest.raises(AggregationError, match="not found"):
        load_population_fractions(tmp_path / "no.csv")
    f = tmp_path / "bad_cols.csv"
    f.write_text("area,admin1,population\na1,p1,10\n")
    with pytest.raises(AggregationError, match="area_id"):
        load_population_fractions(f)
    g = tmp_path / "no_pop.csv"
    g.write_text("area_id,admin1_id,households\na1,p1,10\n")
    with pytest.raises(AggregationError, match="population column"):
        load_population_fractions(g)
    h = tmp_path / "dup.csv"
    h.write_text("area_id,admin1_id,population\na1,p1,10\na1,p1,20\n")
    with pytest.raises(AggregationError, match="duplicate"):
        load_population_fractions(h)
    i = tmp_path / "nan.csv"
    i.write_text("area_id,admin1_id,population\na1,p1,lots\n")
    with pytest.raises(AggregationError, match="bad population"):
        load_population_fractions(i)


def direct_estimates():
    ds = survey_from_clusters(
        [
            ("p1", "rural", "c1", "a1", 2.0, 10, 2),
            ("p1", "rural", "c2", "a1", 2.0, 10, 4),
            ("p1", "rural", "c3", "a2", 2.0, 10, 1),
            ("p1", "rural", "c4", "a2", 2.0, 10, 3),
            ("p2", "urban", "c5", "b1", 2.0, 10, 5),
            ("p2", "urban", "c6", "b1", 2.0, 10, 7),
        ]
    )
    return apply_strategy(ds, "all_unfixed").estimates


def test_point_aggregation_hand_values():
    est = direct_estimates()
    fr = make_fractions()
    # equal weights inside each domain, so p_hat is the event share
    assert est["a1"].p_hat == pytest.approx(0.3)
    assert est["a2"].p_hat == pytest.approx(0.2)
    assert est["b1"].p_hat == pytest.approx(0.6)
    by_adm = {s.group_id: s for s in aggregate_admin1(est, fr)}
    assert by_adm["p1"].point == pytest.approx(0.75 * 0.3 + 0.25 * 0.2)
    assert by_adm["p2"].point == pytest.approx(0.6)
    assert by_adm["p1"].q2_5 is None and by_adm["p1"].draws is None
    nat = aggregate_national(list(by_adm.values()), fr)
    assert nat.group_id == "__national__"
    assert nat.point == pytest.approx(0.4 * 0.275 + 0.6 * 0.6)
    one_step = national_from_areas(est, fr)
    assert one_step.point == pytest.approx(nat.point, rel=1e-12)


def test_draws_aggregate_per_draw():
    rng = np.random.default_rng(8)
    prev = rng.uniform(0.05, 0.4, size=(400, 3))
    fit = make_fit(["a1", "a2", "b1"], prev)
    fr = make_fractions()
    by_adm = {s.group_id: s for s in aggregate_admin1(fit, fr)}
    expected_p1 = prev[:, 0] * 0.75 + prev[:, 1] * 0.25
    assert np.allclose(by_adm["p1"].draws, expected_p1, rtol=1e-12)
    assert by_adm["p1"].point == pytest.approx(np.quantile(expected_p1, 0.5))
    assert by_adm["p1"].q2_5 == pytest.approx(np.quantile(expected_p1, 0.025))
    assert by_adm["p1"].q97_5 == pytest.approx(np.quantile(expected_p1, 0.975))
    assert by_adm["p2"].draws == pytest.approx(prev[:, 2])

    nat = aggregate_national(list(by_adm.values()), fr)
    expected_nat = 0.4 * expected_p1 + 0.6 * prev[:, 2]
    assert np.allclose(nat.draws, expected_nat, rtol=1e-12)
    # one-step equals two-step draw by draw
    one_step = national_from_areas(fit, fr)
    assert np.allclose(one_step.draws, expected_nat, rtol=1e-12)
    assert one_step.point == pytest.approx(nat.point, rel=1e-12)
    # interval endpoints are ordered around the median
    assert nat.q2_5 < nat.point < nat.q97_5


def test_aggregation_error_cases():
    fr = make_fractions()
    est = direct_estimates()
    del est["b1"]
    with pytest.raises(AggregationError, match="no estimate for areas"):
        aggregate_admin1(est, fr)
    fit = make_fit(["a1", "a2"], np.full((50, 2), 0.2))
    with pytest.raises(AggregationError, match="b1"):
        aggregate_admin1(fit, fr)
    with pytest.raises(AggregationError, match="no admin1 summary"):
        aggregate_national([], fr)


def test_smoothed_aggregate_respects_dependence():
    # perfectly anticorrelated areas: the equal-share aggregate is constant,
    # so its interval collapses while the marginal intervals do not
    n = 2000
    base = np.linspace(0.1, 0.3, n)
    prev = np.column_stack([base, 0.4 - base])
    fit = make_fit(["a1", "a2"], prev)
    fr = AggregationFractions(
        source="external_population",
        within_admin1={"p1": {"a1": 0.5, "a2": 0.5}},
        national={"p1": 1.0},
    )
    (summary,) = aggregate_admin1(fit, fr)
    assert summary.point == pytest.approx(0.2, abs=1e-12)
    assert summary.q97_5 - summary.q2_5 == pytest.approx(0.0, abs=1e-12)
