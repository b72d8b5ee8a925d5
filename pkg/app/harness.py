"""
シード付きモンテカルロ実験ハーネス

パイプライン実行（3レジームの振り分け）、評価指標、パラメータ掃引、
結果の CSV / JSON 出力を担当する。
"""
import itertools
import json
import logging
import math
import multiprocessing as mp
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from tqdm import tqdm

from app.alignment.bipartite_map import align_bipartite_map
from app.alignment.graph_model import (
    AttributedGraphPair,
    ModelParams,
    Permutation,
    generate_pair,
    validate_count,
)
from app.alignment.refinement import ATTR_RICH, ATTR_SPARSE, refine
from app.alignment.tree_counting import PartialAlignment, align_by_counting, check_branch_count
from app.config import (
    DEFAULT_ATTR_LOG_FACTOR,
    DEFAULT_C,
    DEFAULT_EPSILON,
    DEFAULT_USER_LOG_FACTOR,
    PIPELINE_MODES,
    RESULTS_COLUMNS,
    RESULTS_SCHEMA_VERSION,
)
from app.shared.analysis import check_conditions
from app.shared.errors import AlignmentError, ParameterError

# ログ設定
logger = logging.getLogger(__name__)

GRID_KEYS = ["n", "m", "q_u", "rho_u", "q_a", "rho_a"]
REGIME_BIPARTITE = "bipartite"
REGIME_NONE = "none"


@dataclass
class ExperimentConfig:
    """実験設定（JSON のキー名と同じ）"""

    grid: Dict[str, List]
    k: int
    c: float = DEFAULT_C
    trials: int = 1
    base_seed: int = 0
    mode: str = "auto"
    epsilon: float = DEFAULT_EPSILON
    user_factor: float = DEFAULT_USER_LOG_FACTOR
    attr_factor: float = DEFAULT_ATTR_LOG_FACTOR
    output_csv: Optional[str] = None
    output_json: Optional[str] = None
    record_timings: bool = False

    def __post_init__(self):
        missing = [key for key in GRID_KEYS if key not in self.grid]
        unknown = [key for key in self.grid if key not in GRID_KEYS]
        if missing or unknown:
            raise ParameterError(f"grid keys must be {GRID_KEYS} (missing={missing}, unknown={unknown})")
        if any(not values for values in self.grid.values()):
            raise ParameterError("every grid list must be non-empty")
        self.k = validate_count("k", self.k, 1)
        self.trials = validate_count("trials", self.trials, 1)
        if self.mode not in PIPELINE_MODES:
            raise ParameterError(f"mode must be one of {PIPELINE_MODES}, got '{self.mode}'")
        if not 0.0 < self.c < 1.0:
            raise ParameterError(f"c must lie in (0, 1), got {self.c}")
        if not self.epsilon > 0.0:
            raise ParameterError(f"epsilon must be > 0, got {self.epsilon}")
        if not (self.user_factor > 0.0 and self.attr_factor > 0.0):
            raise ParameterError("user_factor and attr_factor must be > 0")
        if not 0 <= self.base_seed < 2 ** 64:
            raise ParameterError("base_seed must be a 64-bit unsigned integer")

    @classmethod
    def from_dict(cls, data: Dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ParameterError(f"unknown config keys: {unknown}")
        try:
            return cls(**data)
        except TypeError as e:
            raise ParameterError(f"invalid experiment config: {e}")

    @classmethod
    def from_json(cls, path: Union[str, Path]) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ParameterError(f"{path}: invalid JSON ({e})")
        return cls.from_dict(data)

    def cells(self) -> List[ModelParams]:
        """グリッドの直積（キー順 n, m, q_u, rho_u, q_a, rho_a で固定）"""
        combos = itertools.product(*(self.grid[key] for key in GRID_KEYS))
        cells = [ModelParams(**dict(zip(GRID_KEYS, combo))) for combo in combos]
        for params in cells:
            if self.mode != "bipartite-map":
                check_branch_count(params, self.k)
        return cells


@dataclass
class Metrics:
    """1試行の評価指標"""

    precision: float
    coverage: float
    accuracy: float
    exact: bool
    timings: Dict[str, Optional[float]] = field(default_factory=dict)


@dataclass
class TrialResult:
    """1試行の結果（conditions はセルの条件レポートの判定）"""

    cell: int
    trial: int
    params: ModelParams
    seed: int
    regime: str
    metrics: Metrics
    conditions: Dict[str, bool] = field(default_factory=dict)


@dataclass
class PipelineOutcome:
    partial: PartialAlignment
    final: np.ndarray
    metrics: Metrics
    regime: str


def compute_metrics(
    partial: PartialAlignment,
    final: Union[np.ndarray, Sequence[int], Permutation],
    truth: Permutation,
) -> Metrics:
    """
    部分アライメントと最終対応の評価

    I が空のときの precision は 1（空の主張は誤りを含まない）。
    最終対応の未対応ユーザ（−1）は不正解として数える。
    """
    truth_images = truth.images
    n = len(truth)
    final_images = final.images if isinstance(final, Permutation) else np.asarray(final, dtype=np.int64)
    if final_images.shape != (n,):
        raise ParameterError(f"final mapping must have length {n}")
    if partial.matched:
        correct = sum(1 for i, j in partial.mapping.items() if truth_images[i] == j)
        precision = correct / len(partial.matched)
    else:
        precision = 1.0
    accuracy = float(np.count_nonzero(final_images == truth_images)) / n
    return Metrics(
        precision=precision,
        coverage=len(partial.matched) / n,
        accuracy=accuracy,
        exact=bool(np.array_equal(final_images, truth_images)),
    )


def prefers_bipartite(params: ModelParams, epsilon: float) -> bool:
    """属性情報だけで十分かつユーザ辺が不足するレジーム（有限サンプルの代理判定）"""
    cutoff = (1.0 + epsilon) * math.log(params.n)
    attr_info = params.m * params.q_a * params.s_a
    user_info = params.n * params.q_u * params.s_u
    return attr_info >= cutoff and user_info < cutoff


def run_pipeline(
    pair: AttributedGraphPair,
    k: int,
    c: float = DEFAULT_C,
    mode: str = "auto",
    epsilon: float = DEFAULT_EPSILON,
    user_factor: float = DEFAULT_USER_LOG_FACTOR,
    attr_factor: float = DEFAULT_ATTR_LOG_FACTOR,
) -> PipelineOutcome:
    """
    アライメントのパイプラインを実行

    Args:
        pair: グラフペア
        k: 分岐数
        c: しきい値定数
        mode: counting-only / counting+sparse / counting+rich / bipartite-map / auto
        epsilon: auto の振り分けで使う (1+ε)log n の ε
        user_factor, attr_factor: 精緻化しきい値の係数（refine_thresholds を参照）

    Returns:
        部分アライメント、最終対応、評価指標、使ったレジーム
    """
    if mode not in PIPELINE_MODES:
        raise ParameterError(f"mode must be one of {PIPELINE_MODES}, got '{mode}'")
    timings: Dict[str, Optional[float]] = {"counting": None, "refinement": None, "bipartite": None}

    if mode == "bipartite-map" or (mode == "auto" and prefers_bipartite(pair.params, epsilon)):
        start = time.perf_counter()
        perm = align_bipartite_map(pair)
        timings["bipartite"] = time.perf_counter() - start
        partial = PartialAlignment()
        final = perm.images.copy()
        regime = REGIME_BIPARTITE
    else:
        start = time.perf_counter()
        partial = align_by_counting(pair, k, c)
        timings["counting"] = time.perf_counter() - start
        if mode == "counting-only":
            final = partial.as_array(pair.n)
            regime = REGIME_NONE
        else:
            requested = {"counting+sparse": ATTR_SPARSE, "counting+rich": ATTR_RICH}.get(mode, "auto")
            start = time.perf_counter()
            result, regime = refine(
                pair, partial, requested, user_factor=user_factor, attr_factor=attr_factor
            )
            timings["refinement"] = time.perf_counter() - start
            final = result.images

    metrics = compute_metrics(partial, final, pair.truth)
    metrics.timings = timings
    logger.info(
        f"Pipeline mode={mode} regime={regime}: coverage={metrics.coverage:.3f} "
        f"precision={metrics.precision:.3f} accuracy={metrics.accuracy:.3f} exact={metrics.exact}"
    )
    return PipelineOutcome(partial=partial, final=final, metrics=metrics, regime=regime)


def derive_child_seed(base_seed: int, cell: int, trial: int) -> int:
    """(基底シード, セル番号, 試行番号) から子シードを決定的に導出"""
    sequence = np.random.SeedSequence(base_seed, spawn_key=(cell, trial))
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


def child_seed_grid(base_seed: int, cells: int, trials: int) -> Dict[Tuple[int, int], int]:
    """全 (cell, trial) の子シード表（衝突があれば例外）"""
    seeds = {
        (cell, trial): derive_child_seed(base_seed, cell, trial)
        for cell in range(cells)
        for trial in range(trials)
    }
    if len(set(seeds.values())) != len(seeds):
        raise AlignmentError(f"child seed collision for base seed {base_seed}")
    return seeds


def _run_trial(task: Tuple[int, int, ModelParams, int, ExperimentConfig]) -> TrialResult:
    cell, trial, params, seed, config = task
    pair = generate_pair(params, seed)
    outcome = run_pipeline(
        pair, config.k, config.c, config.mode, config.epsilon, config.user_factor, config.attr_factor
    )
    return TrialResult(
        cell=cell,
        trial=trial,
        params=params,
        seed=seed,
        regime=outcome.regime,
        metrics=outcome.metrics,
        conditions=check_conditions(params, config.k, config.epsilon).verdicts,
    )


def conditions_column(verdicts: Dict[str, bool]) -> str:
    """成り立つ条件の名前を "|" でつないだ CSV 用の要約"""
    return "|".join(name for name in sorted(verdicts) if verdicts[name])


def _trial_row(config: ExperimentConfig, result: TrialResult) -> Dict:
    timings = result.metrics.timings if config.record_timings else {}
    row = {
        "schema": RESULTS_SCHEMA_VERSION,
        "row_type": "trial",
        "cell": result.cell,
        "trial": result.trial,
        **result.params.to_dict(),
        "k": config.k,
        "c": config.c,
        "mode": config.mode,
        "regime": result.regime,
        "seed": result.seed,
        "precision": result.metrics.precision,
        "coverage": result.metrics.coverage,
        "accuracy": result.metrics.accuracy,
        "exact": result.metrics.exact,
        "conditions": conditions_column(result.conditions),
    }
    for stage in ("counting", "refinement", "bipartite"):
        row[f"time_{stage}"] = timings.get(stage)
    return row


def _aggregate(config: ExperimentConfig, cells: List[ModelParams], results: List[TrialResult]) -> Tuple[List[Dict], List[Dict]]:
    rows: List[Dict] = []
    summaries: List[Dict] = []
    for cell, params in enumerate(cells):
        cell_results = [r for r in results if r.cell == cell]
        precision = float(np.mean([r.metrics.precision for r in cell_results]))
        coverage = float(np.mean([r.metrics.coverage for r in cell_results]))
        accuracy = float(np.mean([r.metrics.accuracy for r in cell_results]))
        exact = float(np.mean([r.metrics.exact for r in cell_results]))
        regimes = sorted({r.regime for r in cell_results})
        verdicts = cell_results[0].conditions
        rows.append({
            "schema": RESULTS_SCHEMA_VERSION,
            "row_type": "aggregate",
            "cell": cell,
            "trial": None,
            **params.to_dict(),
            "k": config.k,
            "c": config.c,
            "mode": config.mode,
            "regime": "|".join(regimes),
            "seed": None,
            "precision": precision,
            "coverage": coverage,
            "accuracy": accuracy,
            "exact": exact,
            "conditions": conditions_column(verdicts),
        })
        summaries.append({
            "cell": cell,
            "params": params.to_dict(),
            "trials": len(cell_results),
            "mean_precision": precision,
            "mean_coverage": coverage,
            "mean_accuracy": accuracy,
            "exact_frequency": exact,
            "regimes": {regime: sum(1 for r in cell_results if r.regime == regime) for regime in regimes},
            "conditions": verdicts,
        })
    return rows, summaries


def run_experiment(config: ExperimentConfig, jobs: int = 1, progress: bool = True) -> pd.DataFrame:
    """
    グリッド × 試行の実験を実行して結果表を返す

    試行は並列に実行するが、出力は (cell, trial) 順に並べ替えるので
    同じ設定・同じ基底シードなら出力ファイルはバイト単位で一致する。
    """
    cells = config.cells()
    seeds = child_seed_grid(config.base_seed, len(cells), config.trials)
    tasks = [
        (cell, trial, params, seeds[(cell, trial)], config)
        for cell, params in enumerate(cells)
        for trial in range(config.trials)
    ]
    logger.info(f"Running {len(cells)} cells x {config.trials} trials (mode={config.mode}, jobs={jobs})")

    results: Dict[Tuple[int, int], TrialResult] = {}
    with tqdm(total=len(tasks), desc="trials", disable=not progress) as pbar:
        if jobs > 1:
            ctx = mp.get_context("spawn")
            with ProcessPoolExecutor(max_workers=jobs, mp_context=ctx) as ex:
                futures = {ex.submit(_run_trial, task): task[:2] for task in tasks}
                for fut in as_completed(futures):
                    results[futures[fut]] = fut.result()
                    pbar.update(1)
        else:
            for task in tasks:
                results[task[:2]] = _run_trial(task)
                pbar.update(1)

    ordered = [results[key] for key in sorted(results)]
    aggregate_rows, summaries = _aggregate(config, cells, ordered)
    rows = [_trial_row(config, result) for result in ordered] + aggregate_rows
    table = pd.DataFrame(rows, columns=RESULTS_COLUMNS)

    if config.output_csv:
        Path(config.output_csv).parent.mkdir(parents=True, exist_ok=True)
        table.to_csv(config.output_csv, index=False, lineterminator="\n")
        logger.info(f"Wrote results CSV {config.output_csv}")
    if config.output_json:
        Path(config.output_json).parent.mkdir(parents=True, exist_ok=True)
        payload = {"schema": RESULTS_SCHEMA_VERSION, "config": asdict(config), "cells": summaries}
        Path(config.output_json).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        logger.info(f"Wrote aggregates JSON {config.output_json}")
    return table
