import numpy as np
import pytest

from smallarea.data import (
    SurveyDataError,
    SurveyDataset,
    UnknownDomainError,
    extend_domain,
    load_survey,
    save_survey,
    validate,
)

from conftest import REPLICA_CSV, survey_from_clusters


def toy_survey():
    return survey_from_clusters(
        [
            ("a1", "rural", "c1", "d1", 2.0, 3, 1),
            ("a1", "rural", "c2", "d1", 1.0, 2, 2),
            ("a1", "rural", "c3", "d2", 4.0, 2, 0),
            ("a1", "urban", "c4", "d1", 3.0, 2, 1),
        ]
    )


def test_cluster_table_sufficient_statistics():
    data = toy_survey()
    table = data.clusters
    i = list(table.ids).index("c1")
    assert table.weight_total[i] == pytest.approx(6.0)
    assert table.weighted_events[i] == pytest.approx(2.0)
    assert table.n_units[i] == 3
    assert table.events[i] == 1
    assert table.stratum_sizes == {("a1", "rural"): 3, ("a1", "urban"): 1}


def test_domain_and_stratum_enumeration():
    data = toy_survey()
    assert data.domain_ids == ("d1", "d2")
    assert data.strata == (("a1", "rural"), ("a1", "urban"))
    assert data.stratum_size("a1", "rural") == 3
    assert data.stratum_size("a1", "missing") == 0
    assert data.domain_admin1 == {"d1": "a1", "d2": "a1"}


def test_extend_domain_masks_and_blocks():
    data = toy_survey()
    ext = extend_domain(data, "d1")
    assert ext.n_clusters_in_domain == 3
    assert {b.urban_rural for b in ext.blocks} == {"rural", "urban"}
    # extended weight is zero outside the domain, untouched inside
    assert ext.v.sum() == pytest.approx(2.0 * 3 + 1.0 * 2 + 3.0 * 2)
    assert ext.z.sum() == pytest.approx(4.0)
    rural = next(b for b in ext.blocks if b.urban_rural == "rural")
    assert rural.n_planned == 3  # planned stratum count, not in-domain count


def test_extend_domain_unknown_domain():
    data = toy_survey()
    with pytest.raises(UnknownDomainError):
        extend_domain(data, "nope")
    ext = extend_domain(data, "nope", allow_missing=True)
    assert ext.no_data
    assert ext.blocks == ()


def test_rejects_cluster_in_two_strata():
    with pytest.raises(SurveyDataError, match="more than one"):
        survey_from_clusters(
            [
                ("a1", "rural", "c1", "d1", 1.0, 2, 1),
                ("a1", "urban", "c1", "d1", 1.0, 2, 1),
            ]
        )


def test_rejects_cluster_in_two_domains():
    with pytest.raises(SurveyDataError, match="more than one domain"):
        survey_from_clusters(
            [
                ("a1", "rural", "c1", "d1", 1.0, 2, 1),
                ("a1", "rural", "c1", "d2", 1.0, 2, 1),
            ]
        )


def test_rejects_domain_spanning_admin1():
    with pytest.raises(SurveyDataError, match="spans admin1"):
        survey_from_clusters(
            [
                ("a1", "rural", "c1", "d1", 1.0, 2, 1),
                ("a2", "rural", "c2", "d1", 1.0, 2, 1),
            ]
        )


def test_rejects_bad_weight_and_outcome():
    with pytest.raises(SurveyDataError, match="weight"):
        SurveyDataset(
            admin1=np.array(["a"], dtype=object),
            urban_rural=np.array(["rural"], dtype=object),
            cluster=np.array(["c"], dtype=object),
            domain=np.array(["d"], dtype=object),
            weight=np.array([-1.0]),
            outcome=np.array([0], dtype=np.int8),
        )
    with pytest.raises(SurveyDataError, match="outcome"):
        SurveyDataset(
            admin1=np.array(["a"], dtype=object),
            urban_rural=np.array(["rural"], dtype=object),
            cluster=np.array(["c"], dtype=object),
            domain=np.array(["d"], dtype=object),
            weight=np.array([1.0]),
            outcome=np.array([3], dtype=np.int8),
        )


def test_rejects_unknown_class():
    with pytest.raises(SurveyDataError, match="urban_rural"):
        survey_from_clusters([("a1", "suburban", "c1", "d1", 1.0, 2, 1)])


def test_unit_schema_round_trip(tmp_path):
    data = toy_survey()
    path = tmp_path / "survey.csv"
    save_survey(data, path)
    back = load_survey(path, schema="unit")
    assert np.array_equal(back.weight, data.weight)
    assert np.array_equal(back.outcome, data.outcome)
    assert back.cluster.tolist() == data.cluster.tolist()


def test_cluster_schema_expands_counts(tmp_path):
    path = tmp_path / "agg.csv"
    path.write_text(
        "admin1,urban_rural,cluster,domain,weight,n_trials,events\n"
        "a1,rural,c1,d1,2.5,4,3\n"
        "a1,rural,c2,d1,1.5,2,0\n"
    )
    data = load_survey(path, schema="cluster")
    assert len(data) == 6
    assert data.outcome.sum() == 3
    table = data.clusters
    i = list(table.ids).index("c1")
    assert table.weight_total[i] == pytest.approx(10.0)


def test_load_reports_bad_rows_together(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text(
        "admin1,urban_rural,cluster,domain,weight,outcome\n"
        "a1,rural,c1,d1,1.0,1\n"
        "a1,rural,c1,d1,0,1\n"
        "a1,rural,c1,d1,1.0,7\n"
    )
    with pytest.raises(SurveyDataError) as err:
        load_survey(path, schema="unit")
    msg = str(err.value)
    assert "row 3" in msg and "row 4" in msg


def test_load_missing_column(tmp_path):
    path = tmp_path / "cols.csv"
    path.write_text("admin1,cluster,domain,weight,outcome\na,c,d,1,0\n")
    with pytest.raises(SurveyDataError, match="urban_rural"):
        load_survey(path, schema="unit")


def test_validate_reports_structure():
    report = validate(toy_survey())
    assert report.n_units == 9
    assert report.n_clusters == 4
    assert report.n_strata == 2
    assert not report.violations
    text = report.to_text()
    assert "a1, rural" in text


def test_validate_warns_on_single_cluster_stratum():
    data = survey_from_clusters(
        [
            ("a1", "rural", "c1", "d1", 1.0, 2, 1),
            ("a1", "rural", "c2", "d1", 1.0, 2, 0),
            ("a1", "urban", "c3", "d1", 1.0, 2, 1),
        ]
    )
    report = validate(data)
    assert any("urban" in w for w in report.warnings)
    assert not report.violations


def test_validate_flags_duplicate_unit_ids():
    from smallarea.data import UnitRecord

    records = [
        UnitRecord("a1", "rural", "c1", "d1", 1.0, 0, unit_id=0),
        UnitRecord("a1", "rural", "c1", "d1", 1.0, 1, unit_id=0),
    ]
    report = validate(SurveyDataset.from_records(records))
    assert any("duplicated" in v for v in report.violations)


def test_replica_fixture_loads():
    data = load_survey(REPLICA_CSV, schema="cluster")
    assert len(data.domain_ids) == 25
    assert data.clusters.ids.shape[0] == 61
    assert data.stratum_size("Muchinga", "rural") == 2
    assert data.stratum_size("North-Western", "urban") == 3
