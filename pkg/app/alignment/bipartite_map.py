"""
属性辺のみを使う二部グラフMAPアライメント
"""
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from app.alignment.graph_model import (
    AttributedGraphPair,
    ModelParams,
    Permutation,
    edge_joint_probabilities,
)
from app.shared.errors import InfeasibleAssignmentError, ParameterError

# ログ設定
logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class BipartiteWeights:
    """ペアごとの対数尤度比スコアと属性辺の同時確率"""

    w: np.ndarray
    q11: float
    q10: float
    q01: float
    q00: float


def _log_ratio(numerator: float, denominator: float) -> float:
    if numerator <= 0.0:
        return -math.inf
    return math.log(numerator / denominator)


def pair_weights(pair: AttributedGraphPair) -> BipartiteWeights:
    """
    w[i][j] = N11·log(q11/q_a²) + (N10+N01)·log(q10/(q_a(1−q_a))) + N00·log(q00/(1−q_a)²)

    「対応している」と「独立」の対数事後比。q10=0（ρ_a=1）のとき
    属性プロファイルが食い違うペアは −∞ になる。
    """
    params = pair.params
    m = params.m
    if m < 1:
        raise ParameterError("bipartite MAP needs at least one attribute")
    q = params.q_a
    q11, q10, q01, q00 = edge_joint_probabilities(q, params.rho_a)
    if q00 <= 0.0 or q10 < 0.0:
        raise ParameterError(f"invalid joint probabilities q00={q00}, q10={q10}")

    log11 = _log_ratio(q11, q * q)
    log10 = _log_ratio(q10, q * (1.0 - q))
    log00 = _log_ratio(q00, (1.0 - q) ** 2)

    attr1 = pair.g1.attr_adj.astype(np.int64)
    attr2 = pair.g2.attr_adj.astype(np.int64)
    n11 = attr1 @ attr2.T
    n10 = attr1.sum(axis=1)[:, np.newaxis] - n11
    n01 = attr2.sum(axis=1)[np.newaxis, :] - n11
    n00 = m - n11 - n10 - n01
    mismatch = n10 + n01

    with np.errstate(invalid="ignore"):
        w = n11 * log11 + n00 * log00
        if math.isinf(log10):
            w = np.where(mismatch > 0, -math.inf, w)
        else:
            w = w + mismatch * log10
    return BipartiteWeights(w=w, q11=q11, q10=q10, q01=q01, q00=q00)


def sentinel_for(w: np.ndarray) -> float:
    """−∞ の代わりに使う有限値 −(2n·M+1)（M は有限要素の最大絶対値）"""
    finite = np.abs(w[np.isfinite(w)])
    largest = float(finite.max()) if finite.size else 0.0
    return -(2.0 * w.shape[0] * largest + 1.0)


def max_weight_assignment(w: np.ndarray) -> Permutation:
    """
    総重み最大の置換を O(n³) の割当アルゴリズムで求める

    −∞ 要素は番兵値に置き換える。番兵を使わない完全マッチングが
    無ければ InfeasibleAssignmentError。
    """
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ParameterError(f"weight matrix must be square, got {w.shape}")
    if np.isnan(w).any() or np.isposinf(w).any():
        raise ParameterError("weight matrix must be real or -inf")
    blocked = np.isneginf(w)
    if blocked.all(axis=1).any():
        raise InfeasibleAssignmentError("a row has no feasible partner")
    finite = np.where(blocked, sentinel_for(w), w)
    rows, cols = linear_sum_assignment(finite, maximize=True)
    if blocked[rows, cols].any():
        raise InfeasibleAssignmentError("no perfect matching avoids the -inf entries")
    images = np.empty(w.shape[0], dtype=np.int64)
    images[rows] = cols
    return Permutation(images)


def assignment_total(w: np.ndarray, perm: Permutation) -> float:
    """置換の総重み Σ_i w[i][π(i)]"""
    return float(np.asarray(w)[np.arange(len(perm)), perm.images].sum())


def align_bipartite_map(pair: AttributedGraphPair) -> Permutation:
    """二部グラフMAP推定でユーザ対応を求めるメイン関数"""
    weights = pair_weights(pair)
    perm = max_weight_assignment(weights.w)
    logger.info(f"Bipartite MAP assignment total weight {assignment_total(weights.w, perm):.6g}")
    return perm


def bipartite_recovery_margin(params: ModelParams) -> float:
    """m(√(q11 q00) − √(q01 q10))² − log n（正なら完全復元が見込める）"""
    if params.m < 1:
        raise ParameterError("margin needs at least one attribute")
    q11, q10, q01, q00 = edge_joint_probabilities(params.q_a, params.rho_a)
    gap = math.sqrt(q11 * q00) - math.sqrt(q01 * q10)
    return params.m * gap * gap - math.log(params.n)
