"""
実験ハーネスのテスト
"""
import json

import numpy as np
import pytest

from app.alignment.graph_model import ModelParams, Permutation, generate_pair
from app.alignment.tree_counting import PartialAlignment
from app.config import RESULTS_COLUMNS
from app.harness import (
    REGIME_BIPARTITE,
    REGIME_NONE,
    ExperimentConfig,
    child_seed_grid,
    compute_metrics,
    conditions_column,
    derive_child_seed,
    prefers_bipartite,
    run_experiment,
    run_pipeline,
)
from app.shared.errors import ParameterError

REGIME3_PARAMS = ModelParams(n=200, m=400, q_u=0.01, rho_u=0.5, q_a=0.2, rho_a=0.9)
# n=100 では 3·log n のしきい値（約54.8）が真のペアの共通近傍数の平均（最大49.5）を超える
SMALL_GRAPH_FACTORS = {"user_factor": 0.33, "attr_factor": 3.0}


def _config(**overrides):
    data = {
        "grid": {"n": [12], "m": [4], "q_u": [0.4], "rho_u": [0.9], "q_a": [0.4], "rho_a": [0.8]},
        "k": 2,
        "trials": 1,
        "base_seed": 5,
        "mode": "counting+sparse",
    }
    data.update(overrides)
    return ExperimentConfig.from_dict(data)


def test_metrics_final_equals_truth():
    truth = Permutation(np.array([2, 0, 1]))
    metrics = compute_metrics(PartialAlignment(), truth.images, truth)
    assert metrics.exact
    assert metrics.accuracy == 1.0


def test_metrics_empty_partial():
    truth = Permutation.identity(5)
    metrics = compute_metrics(PartialAlignment(), np.full(5, -1), truth)
    assert metrics.coverage == 0.0
    assert metrics.precision == 1.0
    assert metrics.accuracy == 0.0
    assert not metrics.exact


def test_metrics_ninety_of_hundred():
    mapping = {i: i for i in range(90)}
    mapping.update({90 + j: 90 + (j + 1) % 10 for j in range(10)})
    partial = PartialAlignment.from_mapping(mapping)
    metrics = compute_metrics(partial, partial.as_array(100), Permutation.identity(100))
    assert metrics.precision == pytest.approx(0.9)
    assert metrics.coverage == 1.0
    assert metrics.accuracy == pytest.approx(0.9)
    assert not metrics.exact


def test_metrics_rejects_wrong_length():
    with pytest.raises(ParameterError):
        compute_metrics(PartialAlignment(), np.zeros(3, dtype=np.int64), Permutation.identity(4))


def test_counting_only_final_is_partial(small_pair):
    outcome = run_pipeline(small_pair, 2, 0.5, "counting-only")
    assert outcome.regime == REGIME_NONE
    assert np.array_equal(outcome.final, outcome.partial.as_array(small_pair.n))
    assert outcome.metrics.exact == (len(outcome.partial.matched) == small_pair.n and outcome.metrics.accuracy == 1.0)
    assert outcome.metrics.timings["refinement"] is None


def test_noiseless_attributes_give_exact_alignment():
    # 属性プロファイルが全ユーザで異なれば ρ_a=1 の MAP は真の対応のみ
    params = ModelParams(n=30, m=40, q_u=0.4, rho_u=1.0, q_a=0.5, rho_a=1.0)
    pair = generate_pair(params, 77)
    outcome = run_pipeline(pair, 2, mode="bipartite-map")
    assert outcome.regime == REGIME_BIPARTITE
    assert outcome.metrics.exact
    assert outcome.metrics.accuracy == 1.0
    assert outcome.metrics.coverage == 0.0
    assert outcome.metrics.precision == 1.0


def test_regime_three_dispatches_to_bipartite():
    assert prefers_bipartite(REGIME3_PARAMS, 0.1)
    dense = ModelParams(n=200, m=400, q_u=0.3, rho_u=0.5, q_a=0.2, rho_a=0.9)
    assert not prefers_bipartite(dense, 0.1)
    outcome = run_pipeline(generate_pair(REGIME3_PARAMS, 1), 2, mode="auto")
    assert outcome.regime == REGIME_BIPARTITE
    assert outcome.metrics.timings["counting"] is None


def test_unknown_mode_is_rejected(small_pair):
    with pytest.raises(ParameterError):
        run_pipeline(small_pair, 2, mode="greedy")


def test_child_seeds_are_deterministic_and_distinct():
    assert derive_child_seed(42, 3, 7) == derive_child_seed(42, 3, 7)
    assert derive_child_seed(42, 3, 7) != derive_child_seed(42, 7, 3)
    assert derive_child_seed(42, 0, 0) != derive_child_seed(43, 0, 0)
    grid = child_seed_grid(42, 10, 50)
    assert len(grid) == 500
    assert len(set(grid.values())) == 500


@pytest.mark.parametrize(
    "overrides",
    [
        {"trials": 0},
        {"trials": 1.5},
        {"trials": "3"},
        {"k": 2.5},
        {"user_factor": 0.0},
        {"attr_factor": -1.0},
        {"mode": "greedy"},
        {"c": 1.0},
        {"epsilon": 0.0},
        {"base_seed": -1},
        {"grid": {"n": [12], "m": [4]}},
        {"grid": {"n": [], "m": [4], "q_u": [0.4], "rho_u": [0.9], "q_a": [0.4], "rho_a": [0.8]}},
        {"unexpected": 1},
    ],
)
def test_config_validation(overrides):
    with pytest.raises(ParameterError):
        _config(**overrides)


def test_config_rejects_too_many_branches():
    with pytest.raises(ParameterError):
        _config(k=5).cells()
    assert len(_config(k=5, mode="bipartite-map").cells()) == 1


def test_config_from_json(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json", encoding="utf-8")
    with pytest.raises(ParameterError):
        ExperimentConfig.from_json(path)
    path.write_text(json.dumps({"grid": _config().grid, "k": 2, "trials": 3}), encoding="utf-8")
    config = ExperimentConfig.from_json(path)
    assert config.trials == 3
    assert config.mode == "auto"


def test_cells_follow_grid_order():
    config = _config(grid={"n": [12, 14], "m": [4], "q_u": [0.4], "rho_u": [0.5, 0.9], "q_a": [0.4], "rho_a": [0.8]})
    cells = config.cells()
    assert [(p.n, p.rho_u) for p in cells] == [(12, 0.5), (12, 0.9), (14, 0.5), (14, 0.9)]


def test_single_trial_outputs(tmp_path):
    config = _config(output_csv=str(tmp_path / "out.csv"), output_json=str(tmp_path / "out.json"))
    table = run_experiment(config, progress=False)
    assert list(table.columns) == RESULTS_COLUMNS
    trials = table[table["row_type"] == "trial"]
    assert len(trials) == 1
    assert (table["row_type"] == "aggregate").sum() == 1
    # 計時を記録しない設定では空欄
    assert trials["time_counting"].isna().all()
    payload = json.loads((tmp_path / "out.json").read_text())
    assert payload["cells"][0]["trials"] == 1
    assert "exact_information" in payload["cells"][0]["conditions"]


def test_repeat_runs_are_byte_identical(tmp_path):
    config = _config(
        trials=3,
        grid={"n": [12], "m": [4], "q_u": [0.4], "rho_u": [0.5, 0.9], "q_a": [0.4], "rho_a": [0.8]},
        output_csv=str(tmp_path / "out.csv"),
        output_json=str(tmp_path / "out.json"),
    )
    run_experiment(config, progress=False)
    first = ((tmp_path / "out.csv").read_bytes(), (tmp_path / "out.json").read_bytes())
    run_experiment(config, progress=False)
    second = ((tmp_path / "out.csv").read_bytes(), (tmp_path / "out.json").read_bytes())
    assert first == second


def test_parallel_run_matches_serial(tmp_path):
    grid = {"n": [12], "m": [4], "q_u": [0.4], "rho_u": [0.5, 0.9], "q_a": [0.4], "rho_a": [0.8]}
    serial = run_experiment(_config(trials=2, grid=grid, output_csv=str(tmp_path / "a.csv")), jobs=1, progress=False)
    parallel = run_experiment(_config(trials=2, grid=grid, output_csv=str(tmp_path / "b.csv")), jobs=2, progress=False)
    assert serial.equals(parallel)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_recorded_timings_are_filled():
    table = run_experiment(_config(record_timings=True), progress=False)
    trial = table[table["row_type"] == "trial"].iloc[0]
    assert trial["time_counting"] >= 0.0
    assert trial["time_refinement"] >= 0.0


def test_integral_float_counts_are_accepted():
    config = _config(
        k=2.0,
        trials=2.0,
        grid={"n": [12.0], "m": [4.0], "q_u": [0.4], "rho_u": [0.9], "q_a": [0.4], "rho_a": [0.8]},
    )
    assert (config.k, config.trials) == (2, 2)
    assert config.cells()[0].n == 12
    table = run_experiment(config, progress=False)
    assert (table["row_type"] == "trial").sum() == 2


def test_non_integral_grid_count_is_rejected():
    config = _config(grid={"n": [12.5], "m": [4], "q_u": [0.4], "rho_u": [0.9], "q_a": [0.4], "rho_a": [0.8]})
    with pytest.raises(ParameterError):
        config.cells()


def test_trial_rows_carry_condition_summary(tmp_path):
    config = _config(trials=2, output_json=str(tmp_path / "out.json"))
    table = run_experiment(config, progress=False)
    payload = json.loads((tmp_path / "out.json").read_text())
    expected = conditions_column(payload["cells"][0]["conditions"])
    assert expected
    assert (table["conditions"] == expected).all()


def test_conditions_column_lists_passing_names():
    assert conditions_column({"b": True, "a": True, "c": False}) == "a|b"
    assert conditions_column({"a": False}) == ""


def test_pipeline_threshold_factors_reach_refinement():
    params = ModelParams(n=100, m=30, q_u=0.5, rho_u=1.0, q_a=0.5, rho_a=1.0)
    pair = generate_pair(params, 8)
    default = run_pipeline(pair, 3, mode="auto")
    lowered = run_pipeline(pair, 3, mode="auto", **SMALL_GRAPH_FACTORS)
    assert default.regime == lowered.regime == "rich"
    assert default.partial.mapping == lowered.partial.mapping
    # 既定の係数では精緻化が1組も伸ばさない
    assert np.count_nonzero(default.final >= 0) == len(default.partial.matched)
    assert np.count_nonzero(lowered.final >= 0) > len(lowered.partial.matched)


@pytest.mark.slow
def test_dense_pipeline_accuracy_and_exact_recovery():
    def run(rho, seed):
        params = ModelParams(n=100, m=30, q_u=0.5, rho_u=rho, q_a=0.5, rho_a=rho)
        return run_pipeline(generate_pair(params, seed), 3, mode="auto", **SMALL_GRAPH_FACTORS)

    weak = np.mean([run(0.2, 3000 + seed).metrics.accuracy for seed in range(20)])
    strong = np.mean([run(0.95, 3000 + seed).metrics.accuracy for seed in range(20)])
    assert strong > weak
    exact = sum(int(run(1.0, 3000 + seed).metrics.exact) for seed in range(20))
    assert exact >= 19


@pytest.mark.slow
def test_regime_three_exact_recovery():
    exact = 0
    for seed in range(20):
        outcome = run_pipeline(generate_pair(REGIME3_PARAMS, 500 + seed), 2, mode="auto")
        assert outcome.regime == REGIME_BIPARTITE
        exact += int(outcome.metrics.exact)
    assert exact >= 18
