import copy
import json
import warnings

import jsonschema
import pytest

from corescope.errors import EmptyAgenda, InvalidRange
from corescope.pipeline import (SCOPER_ORDER, AgendaConfig, EmptyAfterFilter, Store, ValueRange, analyze,
                                bin_edges, bin_index, desk_config, expand_agenda, expand_range, metric_rows,
                                paper_config, run_agenda, run_experiment, strip_timing)
from corescope.resched import Malfunction
from corescope.solver import Budget
from instances import mini_config, tiny_instance


def test_range_examples():
    assert expand_range([8, 15, 3]) == [8, 10, 12]
    assert expand_range([1, 2, 2]) == [1, 1]
    assert expand_range([5, 9, 1]) == [5]
    assert expand_range(ValueRange(0, 86, 86)) == list(range(86))


@pytest.mark.parametrize("bad", [[1, 2, 0], [5, 1, 3], [1, 2]])
def test_invalid_ranges(bad):
    with pytest.raises(InvalidRange):
        expand_range(bad)


def test_paper_agenda_size():
    agenda = expand_agenda(paper_config())
    assert len(agenda) == 3264
    assert len(agenda.infras) == 12
    ids = [e.experiment_id for e in agenda.experiments]
    assert len(set(ids)) == len(ids)


def test_single_point_agenda():
    c = mini_config(infra={**mini_config().infra}, schedule={"schedule_id": 0},
                    reschedule={**mini_config().reschedule, "malfunction_train_id": 0})
    assert len(expand_agenda(c)) == 1


def test_product_count_and_unique_ids():
    c = mini_config()
    c.infra["number_of_agents"] = {"values": [5, 6]}
    c.reschedule["malfunction_train_id"] = [0, 3, 3]
    agenda = expand_agenda(c)
    ids = [e.experiment_id for e in agenda.experiments]
    assert len(agenda.infras) == 2 and len(ids) == 12 == len(set(ids))


def test_duplicate_range_points_collapse():
    c = mini_config()
    c.schedule["schedule_id"] = [1, 2, 2]
    assert expand_agenda(c).schedules == {0: [1]}


def test_empty_agenda_raises():
    c = mini_config()
    c.reschedule["malfunction_train_id"] = 99
    with pytest.raises(EmptyAgenda):
        expand_agenda(c)


def test_reexpansion_is_byte_stable():
    assert expand_agenda(desk_config()).dumps() == expand_agenda(desk_config()).dumps()
    c = AgendaConfig.from_dict(json.loads(json.dumps(desk_config().to_dict())))
    assert expand_agenda(c).dumps() == expand_agenda(desk_config()).dumps()


def test_desk_agenda_shape():
    agenda = expand_agenda(desk_config())
    assert len(agenda.infras) == 12 and len(agenda) == 72


@pytest.fixture(scope="module")
def tiny_result():
    infra, schedule = tiny_instance(3)
    tid = max(schedule.runs, key=lambda t: schedule.runs[t].arrival - schedule.runs[t].departure)
    run = schedule.runs[tid]
    m = Malfunction(tid, run.departure + 1, 4)
    return run_experiment(infra, schedule, m, mini_config(random_seeds=5), "fixture")


def test_result_structure(tiny_result):
    data = tiny_result.data
    assert data["n_agents"] == 3
    assert list(data["scopers"]) == list(SCOPER_ORDER)
    assert len(data["scopers"]["random"]["seeds"]) == 5
    assert data["scopers"]["online_unrestricted"]["status"] == "optimal"
    jsonschema.validate(data, {"type": "object"})
    rows = metric_rows(data)
    assert len(rows) == 6 + 5


def test_vacuous_malfunction_all_scopers_cost_zero():
    infra, schedule = tiny_instance(3)
    tid = min(schedule.runs)
    m = Malfunction(tid, schedule.runs[tid].arrival + 2, 4)
    data = run_experiment(infra, schedule, m, mini_config(), "vacuous").data
    assert data["vacuous"]
    for kind in SCOPER_ORDER:
        assert data["scopers"][kind]["cost"] == 0


def test_budget_exhaustion_skips_offline_scopers():
    infra, schedule = tiny_instance(3)
    tid = max(schedule.runs, key=lambda t: schedule.runs[t].arrival - schedule.runs[t].departure)
    m = Malfunction(tid, schedule.runs[tid].departure + 1, 4)
    config = mini_config(node_limit=0)
    data = run_experiment(infra, schedule, m, config, "starved").data
    un = data["scopers"]["online_unrestricted"]
    assert un["status"] == "budget"
    if un["solution"] is None:
        for kind in ("upper_bound", "max_speedup", "baseline"):
            assert data["scopers"][kind]["status"] == "skipped"
            assert "online_unrestricted" in data["scopers"][kind]["reason"]


def test_run_agenda_store_layout_and_resume(tmp_path):
    agenda = expand_agenda(mini_config())
    store = Store(tmp_path)
    first = run_agenda(agenda, store)
    assert first["ran"] == len(agenda) and first["statuses"] == {"done": len(agenda)}
    assert store.infra_path(0).exists()
    assert store.schedule_path(0, 1).exists()
    assert store.malfunction_path(0, 1, 4).exists()
    assert (store.run_dir("mini") / "metrics.csv").exists()
    assert (store.run_dir("mini") / "agenda.json").read_text() == agenda.dumps()

    # simulate a crash that lost two results
    lost = [agenda.experiments[1], agenda.experiments[6]]
    before = {e.experiment_id: store.experiment_path("mini", e.experiment_id).read_text() for e in lost}
    for e in lost:
        store.experiment_path("mini", e.experiment_id).unlink()
    again = run_agenda(agenda, store)
    assert again["ran"] == 2 and again["skipped_existing"] == len(agenda) - 2
    for e in lost:
        now = json.loads(store.experiment_path("mini", e.experiment_id).read_text())
        assert strip_timing(now) == strip_timing(json.loads(before[e.experiment_id]))


def test_workers_give_identical_results(tmp_path):
    agenda = expand_agenda(mini_config())
    run_agenda(agenda, tmp_path / "a", workers=1)
    run_agenda(agenda, tmp_path / "b", workers=3)
    a = [strip_timing(r) for r in Store(tmp_path / "a").load_results("mini")]
    b = [strip_timing(r) for r in Store(tmp_path / "b").load_results("mini")]
    assert a == b
    for p in (tmp_path / "a" / "infra").rglob("*.json"):
        assert p.read_bytes() == (tmp_path / "b" / p.relative_to(tmp_path / "a")).read_bytes()


def test_corrupt_result_fails_validation(tmp_path):
    agenda = expand_agenda(mini_config())
    store = Store(tmp_path)
    run_agenda(agenda, store)
    path = store.experiment_path("mini", agenda.experiments[0].experiment_id)
    data = json.loads(path.read_text())
    del data["scopers"]["online_unrestricted"]
    path.write_text(json.dumps(data))
    with pytest.raises(jsonschema.ValidationError):
        store.load_results("mini")


def test_unschedulable_inputs_recorded_not_raised(tmp_path):
    c = mini_config()
    c.schedule["slack"] = 0.5
    summary = run_agenda(expand_agenda(c), tmp_path)
    assert summary["statuses"] == {"failed": 10}
    res = Store(tmp_path).load_results("mini")
    assert all("Unschedulable" in r["reason"] for r in res)


def test_bin_edges_by_hand():
    assert bin_edges(0.0, 10.0, 4) == [0.0, 2.5, 5.0, 7.5, 10.0]
    edges = bin_edges(20.0, 200.0, 10)
    assert edges[1] == 38.0 and edges[-1] == 200.0
    assert [bin_index(x, edges) for x in (20.0, 37.9, 38.0, 199.0, 200.0)] == [0, 0, 1, 9, 9]
    assert bin_edges(3.0, 3.0, 10) == [3.0, 3.0]


def _synthetic(eid, t_un, t_bl):
    stats = lambda t, n: {"elapsed": t, "nodes_expanded": n}  # noqa: E731
    entry = lambda t, n: {"stats": stats(t, n), "speedup": t_un / t, "additional_lateness": 0,  # noqa: E731
                          "prediction": {"fp": 0, "fn": 0, "f1": 1.0}}
    sc = {k: entry(t_bl, 1) for k in SCOPER_ORDER}
    sc["online_unrestricted"] = entry(t_un, 10)
    sc["random"]["infeasible"] = 0
    return {"experiment_id": eid, "status": "done", "scopers": sc}


def test_analyze_bins_synthetic_results(tmp_path):
    results = [_synthetic(f"e{i}", t, t / 2) for i, t in enumerate([1.0, 2.0, 3.0, 4.0, 5.0])]
    report = analyze(results, tmp_path, bins=4, plots=False)
    assert report.edges == [1.0, 2.0, 3.0, 4.0, 5.0]
    assert report.bin_counts == [1, 1, 1, 2]
    assert report.summary["bins"][3]["median_speedup_baseline"] == 2.0
    assert (tmp_path / "speedup.csv").read_text().count("\n") == 6


def test_analyze_single_result_gives_one_bin(tmp_path):
    report = analyze([_synthetic("only", 2.0, 1.0)], tmp_path, bins=10, plots=False)
    assert sum(1 for c in report.bin_counts if c) == 1 and report.n_used == 1


def test_analyze_time_filter_and_empty_warning(tmp_path):
    results = [_synthetic(f"e{i}", t, 1.0) for i, t in enumerate([5.0, 25.0, 150.0, 250.0])]
    report = analyze(results, tmp_path / "f", bins=10, min_time=20.0, max_time=200.0, plots=False)
    assert report.n_used == 2 and report.edges[0] == 20.0 and report.edges[-1] == 200.0
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        empty = analyze(results, tmp_path / "g", min_time=1000.0)
    assert empty.n_used == 0
    assert any(issubclass(w.category, EmptyAfterFilter) for w in caught)


def test_analyze_does_not_mutate_results(tmp_path):
    results = [_synthetic(f"e{i}", t, 1.0) for i, t in enumerate([1.0, 3.0])]
    snapshot = copy.deepcopy(results)
    report = analyze(results, tmp_path, bins=2, plots=True)
    assert results == snapshot
    assert any(f.endswith(".svg") for f in report.files)


def test_upper_bound_replays_unrestricted_without_search(tmp_path):
    store = Store(tmp_path)
    run_agenda(expand_agenda(mini_config()), store)
    for r in store.load_results("mini"):
        un, ub = r["scopers"]["online_unrestricted"], r["scopers"]["upper_bound"]
        assert ub["stats"]["nodes_expanded"] == 0
        assert ub["solution"]["runs"] == un["solution"]["runs"]
        assert ub["cost"] == un["cost"]
