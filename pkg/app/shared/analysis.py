"""
期待値・交差モーメントの厳密式と、有限サンプルでの条件レポート
"""
import logging
import math
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Tuple

import multiprocessing as mp
import numpy as np

from app.alignment.graph_model import ModelParams, edge_joint_probabilities, generate_pair
from app.alignment.tree_counting import check_branch_count, log_expected_score, similarity_matrix
from app.config import SE_BAND
from app.shared.errors import ParameterError

# ログ設定
logger = logging.getLogger(__name__)

# 誤ったペア (i≠j) の期待スコアは厳密に0
WRONG_PAIR_EXPECTATION = 0.0

SUPPORTED_MOMENTS = [(1, 1), (2, 0), (0, 2), (2, 1), (1, 2), (2, 2)]


def expected_similarity(params: ModelParams, k: int) -> float:
    """E[Φ_ii] = C(m,k)(ρ_u σ_u²)^k (ρ_a σ_a²)^k C(n−1,k) k!"""
    check_branch_count(params, k)
    if params.q_u > 0.5 or params.q_a > 0.5:
        logger.warning("q > 1/2: moment upper bounds assume q <= 1/2; the exact expectation is unaffected")
    log_value = log_expected_score(params, k)
    if log_value == -math.inf:
        return 0.0
    return math.exp(log_value)


def cross_moment_exact(q: float, rho: float, m1: int, m2: int) -> float:
    """正規化交差モーメント σ^{−(m1+m2)} E[Ã^{m1} B̃^{m2}] の閉形式"""
    if (m1, m2) not in SUPPORTED_MOMENTS:
        raise ParameterError(f"unsupported exponent pair ({m1}, {m2}); use cross_moment_enumerate")
    sigma2 = q * (1.0 - q)
    if (m1, m2) == (1, 1):
        return rho
    if (m1, m2) in ((2, 0), (0, 2)):
        return 1.0
    if (m1, m2) in ((2, 1), (1, 2)):
        return rho * (1.0 - 2.0 * q) / math.sqrt(sigma2)
    return 1.0 + rho * (1.0 - 2.0 * q) ** 2 / sigma2


def cross_moment_enumerate(q: float, rho: float, m1: int, m2: int) -> float:
    """4通りの同時結果を列挙した E[Ã^{m1} B̃^{m2}]（正規化前）"""
    if m1 < 0 or m2 < 0:
        raise ParameterError("exponents must be non-negative")
    p11, p10, p01, p00 = edge_joint_probabilities(q, rho)
    centered = {1: 1.0 - q, 0: -q}
    outcomes = [((1, 1), p11), ((1, 0), p10), ((0, 1), p01), ((0, 0), p00)]
    total = 0.0
    for (a, b), prob in outcomes:
        if prob < 0.0:
            raise ParameterError(f"invalid joint probability {prob}")
        total += prob * centered[a] ** m1 * centered[b] ** m2
    return total


@dataclass
class ConditionReport:
    """定理の漸近条件を有限サンプルの代理不等式として評価した結果"""

    values: Dict[str, Optional[float]]
    verdicts: Dict[str, bool]
    epsilon: float
    k: int
    label: str = "finite-sample surrogates, not guarantees"

    def to_dict(self) -> Dict:
        return asdict(self)


def _ratio(numerator: float, denominator: float) -> Optional[float]:
    if denominator == 0.0:
        return None
    return numerator / denominator


def check_conditions(params: ModelParams, k: int, epsilon: float) -> ConditionReport:
    """
    ほぼ完全復元・完全復元の条件を数値で報告

    ω(g) 型の条件は「値 > g」を代理判定とし、(1+ε)log n と比の条件は
    そのまま判定する。定義できない比（ρ=0 など）は None で判定は False。
    """
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    if not epsilon > 0.0:
        raise ParameterError(f"epsilon must be > 0, got {epsilon}")
    n, m = params.n, params.m
    log_n = math.log(n)
    n_pow = n ** (2.0 / k)
    n_qu_rhou = n * params.q_u * params.rho_u
    n_rhou2 = n * params.rho_u ** 2
    m_qa_rhoa = m * params.q_a * params.rho_a
    exact_term = n * params.q_u * params.s_u + m * params.q_a * params.s_a

    values: Dict[str, Optional[float]] = {
        "n_qu_rhou": n_qu_rhou,
        "m_rhoa2_rhou2": m * params.rho_a ** 2 * params.rho_u ** 2,
        "n_rhou2": n_rhou2,
        "n_pow_2_over_k": n_pow,
        "m_qa_rhoa": m_qa_rhoa,
        "n_pow_over_n_rhou2": _ratio(n_pow, n_rhou2),
        "inv_n_qu_rhou": _ratio(1.0, n_qu_rhou),
        "exact_term": exact_term,
        "log_n": log_n,
        "exact_cutoff": (1.0 + epsilon) * log_n,
        "ratio_u": params.rho_u * (1.0 - params.q_u) / params.q_u,
        "ratio_a": params.rho_a * (1.0 - params.q_a) / params.q_a,
    }

    def above(value: Optional[float], bound: Optional[float]) -> bool:
        return value is not None and bound is not None and value > bound

    verdicts = {
        "almost_n_qu_rhou": above(n_qu_rhou, 1.0),
        "almost_m_rhoa2_rhou2": above(values["m_rhoa2_rhou2"], n_pow),
        "almost_n_rhou2": above(n_rhou2, n_pow),
        "almost_m_qa_rhoa_vs_rhou2": above(m_qa_rhoa, values["n_pow_over_n_rhou2"]),
        "almost_m_qa_rhoa_vs_qu": above(m_qa_rhoa, values["inv_n_qu_rhou"]),
        "exact_information": exact_term >= values["exact_cutoff"],
        "exact_ratio_u": values["ratio_u"] >= epsilon,
        "exact_ratio_a": values["ratio_a"] >= epsilon,
    }
    return ConditionReport(values=values, verdicts=verdicts, epsilon=epsilon, k=k)


@dataclass
class SampleStats:
    """スコアの標本平均・分散・標準誤差"""

    mean: float
    variance: Optional[float]
    standard_error: Optional[float]
    infinite_se: bool = False
    var_over_mean2: Optional[float] = None


@dataclass
class MomentEstimates:
    """Φ_ii, Φ_ij のモンテカルロ推定と解析値の比較"""

    analytic_correct: float
    analytic_wrong: float
    correct: SampleStats
    wrong: SampleStats
    trials: int
    within_band: Dict[str, bool] = field(default_factory=dict)

    def to_dict(self) -> Dict:
        return asdict(self)


def _summarize(samples: np.ndarray) -> SampleStats:
    mean = float(samples.mean())
    if samples.size < 2:
        return SampleStats(mean=mean, variance=None, standard_error=None, infinite_se=True)
    variance = float(samples.var(ddof=1))
    ratio = variance / mean ** 2 if mean != 0.0 else None
    return SampleStats(
        mean=mean,
        variance=variance,
        standard_error=math.sqrt(variance / samples.size),
        var_over_mean2=ratio,
    )


def _within(stats: SampleStats, target: float) -> bool:
    if stats.standard_error is None:
        return False
    return abs(stats.mean - target) <= SE_BAND * stats.standard_error


def _moment_trial(args: Tuple[ModelParams, int, int]) -> Tuple[float, float]:
    params, k, seed = args
    pair = generate_pair(params, seed, identity_truth=True)
    scores = similarity_matrix(pair, k).scores
    return float(scores[0, 0]), float(scores[0, 1])


def trial_seeds(seed: int, trials: int) -> List[int]:
    """試行ごとの子シード（SeedSequence による決定的導出）"""
    children = np.random.SeedSequence(seed).spawn(trials)
    return [int(child.generate_state(1, dtype=np.uint64)[0]) for child in children]


def empirical_moments(
    params: ModelParams, k: int, trials: int, seed: int, jobs: int = 1
) -> MomentEstimates:
    """
    Π*=恒等で代表ペア (0,0) と (0,1) のスコアをモンテカルロ推定

    Args:
        params: モデルパラメータ
        k: 分岐数
        trials: 試行回数
        seed: 基底シード
        jobs: 並列プロセス数（集計順は試行番号順で固定）

    Returns:
        推定値と解析値、4SE帯の判定
    """
    check_branch_count(params, k)
    if trials < 1:
        raise ParameterError("trials must be >= 1")
    tasks = [(params, k, child) for child in trial_seeds(seed, trials)]
    results: List[Optional[Tuple[float, float]]] = [None] * trials

    if jobs > 1:
        ctx = mp.get_context("spawn")
        with ProcessPoolExecutor(max_workers=jobs, mp_context=ctx) as ex:
            futures = {ex.submit(_moment_trial, task): index for index, task in enumerate(tasks)}
            for fut in as_completed(futures):
                results[futures[fut]] = fut.result()
    else:
        for index, task in enumerate(tasks):
            results[index] = _moment_trial(task)

    samples = np.array(results, dtype=np.float64)
    analytic = expected_similarity(params, k)
    correct = _summarize(samples[:, 0])
    wrong = _summarize(samples[:, 1])
    estimates = MomentEstimates(
        analytic_correct=analytic,
        analytic_wrong=WRONG_PAIR_EXPECTATION,
        correct=correct,
        wrong=wrong,
        trials=trials,
        within_band={
            "correct": _within(correct, analytic),
            "wrong": _within(wrong, WRONG_PAIR_EXPECTATION),
        },
    )
    logger.info(
        f"Empirical moments over {trials} trials: mean(correct)={correct.mean:.6g} "
        f"vs analytic {analytic:.6g}; mean(wrong)={wrong.mean:.6g}"
    )
    return estimates


def condition_report_to_dict(report: ConditionReport) -> Dict:
    """JSON 出力用の辞書（非有限値は None）"""
    data = report.to_dict()
    data["values"] = {
        key: (value if value is not None and math.isfinite(value) else None)
        for key, value in data["values"].items()
    }
    return data
