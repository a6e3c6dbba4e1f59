import csv
import json
from dataclasses import replace

import numpy as np
import pytest

from pstc.closedloop import run_closed_loop
from pstc.data import (
    ConfigError,
    TableMismatchError,
    config_hash,
    load_config,
    load_summary,
    load_tables,
    problem_from_dict,
    problem_to_dict,
    read_table_meta,
    save_config,
    save_tables,
    table_paths,
    tables_up_to_date,
    trace_columns,
    write_summary,
    write_trace_csv,
)
from pstc.sysmodel import TriggerConfig


def test_config_round_trip(batch_problem, tmp_path) -> None:
    first = problem_to_dict(batch_problem)
    path = tmp_path / "copy.json"
    save_config(batch_problem, path)
    assert problem_to_dict(load_config(path)) == first
    assert problem_to_dict(problem_from_dict(first)) == first


def test_batch_config_values(batch_problem) -> None:
    assert batch_problem.controller.h == 0.01
    assert batch_problem.trigger.sigma == 0.1
    assert batch_problem.trigger.kappa_max == 25
    assert batch_problem.x0 is None
    assert np.allclose(batch_problem.v, 2 * 0.011**2 * np.eye(2))
    assert set(batch_problem.scenarios) == {"noiseless", "noisy", "random"}


def test_config_hash_ignores_online_settings(batch_problem) -> None:
    base = config_hash(batch_problem)
    assert config_hash(batch_problem.with_epsilon(0.1)) == base
    assert config_hash(replace(batch_problem, scenarios={})) == base
    other = replace(batch_problem, trigger=TriggerConfig(sigma=0.2, kappa_max=25))
    assert config_hash(other) != base


def test_config_errors_name_the_section(batch_problem, tmp_path) -> None:
    raw = problem_to_dict(batch_problem)
    del raw["plant"]
    with pytest.raises(ConfigError, match="plant"):
        problem_from_dict(raw)

    raw = problem_to_dict(batch_problem)
    raw["plant"]["Cp"] = [[0.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 0.0]]
    with pytest.raises(ConfigError, match="plant"):
        problem_from_dict(raw)

    raw = problem_to_dict(batch_problem)
    raw["controller"]["Dc"] = [[1.0]]
    with pytest.raises(ConfigError):
        problem_from_dict(raw)

    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(bad)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")


def test_table_round_trip(batch_problem, batch_tables, tmp_path) -> None:
    stem = tmp_path / "tables" / "batch"
    npz_path, meta_path = save_tables(batch_tables, stem, batch_problem)
    assert (npz_path, meta_path) == table_paths(stem)
    assert tables_up_to_date(stem, batch_problem)

    meta = read_table_meta(stem)
    assert meta["kappa_max"] == 25
    assert meta["config_hash"] == config_hash(batch_problem)
    assert set(meta["timings_ms"]) == {"transition", "reachability", "trigger", "initialization"}

    loaded = load_tables(stem, batch_problem)
    assert np.array_equal(loaded.dist.W, batch_tables.dist.W)
    assert np.array_equal(loaded.trig.q, batch_tables.trig.q)
    assert np.array_equal(loaded.init.shape, batch_tables.init.shape)
    assert loaded.init.kbar == batch_tables.init.kbar
    assert loaded.trig.cv == batch_tables.trig.cv
    assert loaded.trig.custom_qbar is False


def test_table_hash_mismatch(batch_problem, batch_tables, tmp_path) -> None:
    stem = tmp_path / "batch"
    save_tables(batch_tables, stem, batch_problem)
    other = replace(batch_problem, trigger=TriggerConfig(sigma=0.2, kappa_max=25))
    assert not tables_up_to_date(stem, other)
    with pytest.raises(TableMismatchError):
        load_tables(stem, other)
    with pytest.raises(TableMismatchError):
        load_tables(tmp_path / "nothing", batch_problem)


def test_trace_csv_header(batch_problem, batch_tables, tmp_path) -> None:
    expected = (
        ["k", "t", "xi_p_1", "xi_p_2", "xi_p_3", "xi_p_4", "x_c_1", "x_c_2", "y_1", "y_2", "u_1", "u_2"]
        + ["nu_1", "nu_2", "w_1", "trigger", "kappa", "petc_kappa", "eta_bar"]
        + ["est_center_1", "est_center_2", "est_center_3", "est_center_4", "est_trace", "contained"]
    )
    dims = {"n_x": 4, "n_c": 2, "n_y": 2, "n_u": 2, "n_w": 1}
    assert trace_columns(dims) == expected

    scenario = replace(batch_problem.scenario("noisy"), duration=0.1)
    trace = run_closed_loop(batch_problem, batch_tables, scenario)
    path = write_trace_csv(trace, tmp_path / "run" / "trace.csv")
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    assert rows[0] == expected
    assert len(rows) == 11
    assert all(len(r) == len(expected) for r in rows)


def test_zero_duration_files_are_valid(batch_problem, batch_tables, tmp_path) -> None:
    scenario = replace(batch_problem.scenario(), duration=0.0)
    trace = run_closed_loop(batch_problem, batch_tables, scenario)
    path = write_trace_csv(trace, tmp_path / "trace.csv")
    with open(path, newline="") as f:
        assert len(list(csv.reader(f))) == 1
    summary_path = write_summary({"periods": 0}, tmp_path / "summary.json")
    assert load_summary(summary_path) == {"periods": 0}
    json.loads(summary_path.read_text())
