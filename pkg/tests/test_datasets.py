import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import sht_dataset
from stopirl.datasets import (
    SearchDataset,
    SHTDataset,
    StoppingDataset,
    aggregate_search,
    aggregate_sht,
    aggregate_stopping,
    dataset_from_dict,
    dumps_dataset,
    read_dataset,
    write_dataset,
    write_region_csv,
)
from stopirl.errors import MissingStratum, SchemaViolation, VersionMismatch
from stopirl.search import SearchTrialRecord
from stopirl.sht import TrialRecord


def _records(rows):
    return [TrialRecord(*r) for r in rows]


def test_two_records_split_policy():
    recs = _records([(0, 0, 0, 1), (0, 0, 1, 1), (0, 1, 1, 1), (1, 0, 0, 1), (1, 1, 1, 1)])
    ds = aggregate_stopping(recs, [0.5, 0.5], n_envs=2, n_actions=2)
    np.testing.assert_allclose(ds.policies[0, 0], [0.5, 0.5])
    np.testing.assert_array_equal(ds.counts, [[2, 1], [1, 1]])


def test_degenerate_column():
    recs = _records([(m, x, 0, 1) for m in range(2) for x in range(2)])
    ds = aggregate_stopping(recs, [0.5, 0.5], n_envs=2, n_actions=2)
    np.testing.assert_array_equal(ds.policies[:, :, 0], 1.0)


def test_missing_stratum():
    with pytest.raises(MissingStratum):
        aggregate_stopping(_records([(0, 0, 0, 1), (1, 1, 0, 1)]), [0.5, 0.5], n_envs=2, n_actions=2)


def test_mean_stopping_times():
    recs = _records([(0, x, x, 1) for x in range(2)] + [(1, 0, 0, 1), (1, 1, 1, 3)])
    ds = aggregate_sht(recs, [0.5, 0.5], n_envs=2)
    np.testing.assert_allclose(ds.mean_stopping_times, [1.0, 2.0])
    assert ds.tau_max == 3


def test_search_aggregation_counts():
    recs = [
        SearchTrialRecord(0, 0, (0,), 1), SearchTrialRecord(0, 1, (1,), 1),
        SearchTrialRecord(1, 0, (1, 0), 2), SearchTrialRecord(1, 1, (1,), 1),
    ]
    ds = aggregate_search(recs, [0.5, 0.5], n_envs=2)
    np.testing.assert_array_equal(ds.search_policies[0], [[1, 0], [0, 1]])
    np.testing.assert_array_equal(ds.search_policies[1, 0], [1, 1])


def test_repeatability_between_runs():
    a, b = sht_dataset(100_000, 2024), sht_dataset(100_000, 7)
    assert np.max(np.abs(a.policies - b.policies)) < 0.01


def test_costlier_environment_waits_longer():
    diffs = [sht_dataset(20_000, s).mean_stopping_times for s in (1, 2, 3)]
    assert np.mean([d[2] - d[0] for d in diffs]) >= 0


def test_round_trip(tmp_path, sht_data):
    path = tmp_path / "d.json"
    write_dataset(sht_data, path)
    back = read_dataset(path)
    assert back == sht_data
    write_dataset(back, tmp_path / "e.json")
    assert path.read_bytes() == (tmp_path / "e.json").read_bytes()


def test_search_round_trip(tmp_path, search_data):
    write_dataset(search_data, tmp_path / "s.json")
    assert read_dataset(tmp_path / "s.json") == search_data


def _minimal():
    return {
        "schema_version": 1, "kind": "stopping", "prior": [0.5, 0.5],
        "environments": [
            {"id": 0, "policy": [[0.9, 0.1], [0.2, 0.8]], "counts": [10, 10]},
            {"id": 1, "policy": [[0.6, 0.4], [0.3, 0.7]], "counts": [10, 10]},
        ],
    }


def test_minimal_file(tmp_path):
    p = tmp_path / "m.json"
    p.write_text(json.dumps(_minimal()), encoding="utf-8")
    ds = read_dataset(p)
    assert isinstance(ds, StoppingDataset) and ds.n_envs == 2


def test_bad_row_sum_reports_path():
    doc = _minimal()
    doc["environments"][1]["policy"][0] = [0.9, 0.6]
    with pytest.raises(SchemaViolation) as err:
        dataset_from_dict(doc)
    assert err.value.path == "$.environments[1].policy[0]"


@pytest.mark.parametrize("mutate, path", [
    (lambda d: d.pop("prior"), "$"),
    (lambda d: d["environments"][0].update(counts=[0, 10]), "$.environments[0].counts[0]"),
    (lambda d: d["environments"][0].update(extra=1), "$.environments[0]"),
    (lambda d: d.update(kind="sht"), "$.environments[0]"),
    (lambda d: d["environments"][1].update(id=5), "$.environments[1].id"),
])
def test_schema_paths(mutate, path):
    doc = _minimal()
    mutate(doc)
    with pytest.raises(SchemaViolation) as err:
        dataset_from_dict(doc)
    assert err.value.path == path


def test_version_mismatch():
    doc = _minimal()
    doc["schema_version"] = 2
    with pytest.raises(VersionMismatch):
        dataset_from_dict(doc)


def test_invalid_json(tmp_path):
    p = tmp_path / "x.json"
    p.write_text("{nope", encoding="utf-8")
    with pytest.raises(SchemaViolation):
        read_dataset(p)


def test_tau_max_must_bound_means():
    with pytest.raises(SchemaViolation):
        SHTDataset([0.5, 0.5], [[[1, 0], [0, 1]], [[1, 0], [0, 1]]], [[1, 1], [1, 1]], [1.0, 3.0], 2)


def test_search_needs_diagonal_visits():
    with pytest.raises(SchemaViolation):
        SearchDataset([0.5, 0.5], [[[0.5, 0], [0, 1]], [[1, 0], [0, 1]]], [[1, 1], [1, 1]])


def test_region_csv(tmp_path):
    write_region_csv([((0.5, 1.0), True), ((1.0, 2.0), False)], tmp_path / "r.csv", 2)
    assert (tmp_path / "r.csv").read_text() == "env,cost_1,cost_2,feasible\n2,0.5,1.0,1\n2,1.0,2.0,0\n"


rows = st.lists(st.floats(0.0, 1.0, allow_nan=False), min_size=2, max_size=2).filter(lambda r: sum(r) > 0)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.lists(rows, min_size=2, max_size=2), min_size=2, max_size=4),
       st.lists(st.integers(1, 10**6), min_size=1, max_size=1))
def test_serialisation_round_trip_property(raw, k):
    p = np.array([[np.array(r) / sum(r) for r in env] for env in raw])
    ds = StoppingDataset([0.5, 0.5], p, np.full(p.shape[:2], k[0]))
    back = dataset_from_dict(json.loads(dumps_dataset(ds)))
    assert back == ds
