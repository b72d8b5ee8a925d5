"""
部分アライメントを完全な置換へ精緻化する貪欲アルゴリズム

AttrSparse では共通ユーザ近傍数のみ、AttrRich では共通ユーザ近傍数または
共通属性近傍数がしきい値を超えたペアを順に対応付ける。
"""
import logging
import math
from collections import deque
from dataclasses import dataclass
from typing import Deque, Dict, List, Optional, Tuple

import numpy as np
from scipy.optimize import brentq

from app.alignment.graph_model import AttributedGraphPair, ModelParams
from app.alignment.tree_counting import PartialAlignment
from app.config import (
    DEFAULT_ATTR_LOG_FACTOR,
    DEFAULT_USER_LOG_FACTOR,
    REGIMES,
    ROOT_SOLVER_TOLERANCE,
)
from app.shared.errors import ParameterError

# ログ設定
logger = logging.getLogger(__name__)

ATTR_SPARSE = "sparse"
ATTR_RICH = "rich"


def f_eval(x: float) -> float:
    """f(x) = x log x − x + 1"""
    if not x > 0.0:
        raise ParameterError(f"f is defined for x > 0, got {x}")
    return x * math.log(x) - (x - 1.0)


def solve_f_upper(y: float) -> float:
    """
    f(γ) = y の (1,∞) 上の一意解

    上側で単調増加なので括弧を倍々に広げてから Brent 法で解き、
    最後に Newton 法で1回だけ磨く。
    """
    if not y > 0.0:
        raise ParameterError(f"target must be > 0, got {y}")
    if math.isinf(y):
        return math.inf

    upper = 2.0
    while f_eval(upper) < y:
        upper *= 2.0
    gamma = brentq(lambda x: f_eval(x) - y, 1.0, upper, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=1000)
    slope = math.log(gamma)
    if slope > 0.0:
        polished = gamma - (f_eval(gamma) - y) / slope
        if polished > 1.0 and abs(f_eval(polished) - y) < abs(f_eval(gamma) - y):
            gamma = polished
    if abs(f_eval(gamma) - y) > ROOT_SOLVER_TOLERANCE * max(1.0, y):
        logger.warning(f"Root solver residual above tolerance for y={y}")
    return gamma


@dataclass(frozen=True)
class RefineThresholds:
    """精緻化のしきい値パラメータ γ1, γ2, γ3（m=0 なら γ3=∞）"""

    gamma1: float
    gamma2: float
    gamma3: float


def refine_thresholds(
    params: ModelParams,
    user_factor: float = DEFAULT_USER_LOG_FACTOR,
    attr_factor: float = DEFAULT_ATTR_LOG_FACTOR,
) -> RefineThresholds:
    """
    f(γ1)=f(γ2)=a·log n/((n−2)q_u²), f(γ3)=b·log n/(m q_a²) を解く

    既定の係数は a=b=3（AGALIGN_USER_LOG_FACTOR / AGALIGN_ATTR_LOG_FACTOR）。
    """
    if not (user_factor > 0.0 and attr_factor > 0.0):
        raise ParameterError(f"threshold factors must be > 0, got {user_factor}, {attr_factor}")
    n = params.n
    log_n = math.log(n)
    if n > 2:
        gamma_user = solve_f_upper(user_factor * log_n / ((n - 2) * params.q_u ** 2))
    else:
        gamma_user = math.inf
    if params.m > 0:
        gamma_attr = solve_f_upper(attr_factor * log_n / (params.m * params.q_a ** 2))
    else:
        gamma_attr = math.inf
    return RefineThresholds(gamma1=gamma_user, gamma2=gamma_user, gamma3=gamma_attr)


def select_regime(params: ModelParams) -> str:
    """m·q_a·ρ_a ≥ log n なら AttrRich（境界は rich 側）"""
    if params.m * params.q_a * params.rho_a >= math.log(params.n):
        return ATTR_RICH
    return ATTR_SPARSE


def _mapping_arrays(n: int, mapping: Dict[int, int]) -> np.ndarray:
    images = np.full(n, -1, dtype=np.int64)
    seen = set()
    for i, j in mapping.items():
        if not (0 <= i < n and 0 <= j < n):
            raise ParameterError(f"mapping entry ({i}, {j}) out of range")
        if j in seen:
            raise ParameterError("partial mapping is not injective")
        seen.add(j)
        images[i] = j
    return images


def count_common_user_neighbors(
    pair: AttributedGraphPair, mapping: Dict[int, int], i: int, j: int
) -> int:
    """#{u ∈ dom(π) : (i,u)∈G1 かつ (j,π(u))∈G2′}"""
    n = pair.n
    if not (0 <= i < n and 0 <= j < n):
        raise ParameterError(f"user pair ({i}, {j}) out of range")
    images = _mapping_arrays(n, mapping)
    domain = np.flatnonzero(images >= 0)
    adj1 = pair.g1.user_adj
    adj2 = pair.g2.user_adj
    return int(np.count_nonzero(adj1[i, domain] & adj2[j, images[domain]]))


def count_common_attribute_neighbors(pair: AttributedGraphPair, i: int, j: int) -> int:
    """#{a : (i,a)∈G1 かつ (j,a)∈G2′}"""
    n = pair.n
    if not (0 <= i < n and 0 <= j < n):
        raise ParameterError(f"user pair ({i}, {j}) out of range")
    return int(np.count_nonzero(pair.g1.attr_adj[i] & pair.g2.attr_adj[j]))


def recount_user_neighbors(pair: AttributedGraphPair, images: np.ndarray) -> np.ndarray:
    """N^u_π(i,j) の全ペア表をゼロから計算（増分更新の検証用）"""
    domain = np.flatnonzero(images >= 0)
    adj1 = pair.g1.user_adj[:, domain].astype(np.int64)
    adj2 = pair.g2.user_adj[:, images[domain]].astype(np.int64)
    return adj1 @ adj2.T


def attribute_neighbor_table(pair: AttributedGraphPair) -> np.ndarray:
    """N^a(i,j) の全ペア表"""
    return pair.g1.attr_adj.astype(np.int64) @ pair.g2.attr_adj.astype(np.int64).T


@dataclass
class NeighborCounters:
    """現在の π̃ に対する共通近傍数の表（user は増分更新、attr は固定）"""

    user_counts: np.ndarray
    attr_counts: Optional[np.ndarray] = None


@dataclass
class RefinementResult:
    """精緻化の結果（未対応は −1）"""

    images: np.ndarray
    complete: bool
    extended: int

    def mapping(self) -> Dict[int, int]:
        return {int(i): int(j) for i, j in enumerate(self.images) if j >= 0}

    def to_list(self) -> List[Optional[int]]:
        return [int(j) if j >= 0 else None for j in self.images]


class GreedyRefiner:
    """
    しきい値を超えたペアを待ち行列で処理する貪欲精緻化

    初期にしきい値を満たすペアは (i,j) の辞書順で、その後は
    しきい値を初めて超えた順に待ち行列へ入る。
    """

    def __init__(
        self,
        pair: AttributedGraphPair,
        partial: PartialAlignment,
        user_threshold: float,
        attr_threshold: float = math.inf,
    ):
        n = pair.n
        self.pair = pair
        self.user_threshold = user_threshold
        self.attr_threshold = attr_threshold
        self.images = _mapping_arrays(n, partial.mapping)
        self.seeds = dict(partial.mapping)
        self.matched1 = self.images >= 0
        self.matched2 = np.zeros(n, dtype=bool)
        self.matched2[self.images[self.matched1]] = True
        self.extended = 0

        self._neighbors1 = [np.flatnonzero(row) for row in pair.g1.user_adj]
        self._neighbors2 = [np.flatnonzero(row) for row in pair.g2.user_adj]

        attr_counts = None
        if math.isfinite(attr_threshold):
            attr_counts = attribute_neighbor_table(pair)
        self.counters = NeighborCounters(
            user_counts=recount_user_neighbors(pair, self.images),
            attr_counts=attr_counts,
        )
        self._queue: Deque[Tuple[int, int]] = deque()
        self._seed_queue()

    def _qualifies(self) -> np.ndarray:
        qualifying = self.counters.user_counts >= self.user_threshold
        if self.counters.attr_counts is not None:
            qualifying |= self.counters.attr_counts >= self.attr_threshold
        return qualifying

    def _seed_queue(self) -> None:
        qualifying = self._qualifies()
        qualifying &= ~self.matched1[:, np.newaxis]
        qualifying &= ~self.matched2[np.newaxis, :]
        rows, cols = np.nonzero(qualifying)
        self._queue.extend(zip(rows.tolist(), cols.tolist()))

    def _record_match(self, i: int, j: int) -> None:
        self.images[i] = j
        self.matched1[i] = True
        self.matched2[j] = True
        self.extended += 1

        # i の G1 近傍 × j の G2′ 近傍 だけが1増える
        rows = self._neighbors1[i]
        cols = self._neighbors2[j]
        if rows.size == 0 or cols.size == 0:
            return
        block = np.ix_(rows, cols)
        self.counters.user_counts[block] += 1
        updated = self.counters.user_counts[block]
        crossed = (updated >= self.user_threshold) & (updated - 1 < self.user_threshold)
        if self.counters.attr_counts is not None:
            crossed &= self.counters.attr_counts[block] < self.attr_threshold
        crossed &= ~self.matched1[rows][:, np.newaxis]
        crossed &= ~self.matched2[cols][np.newaxis, :]
        r, c = np.nonzero(crossed)
        self._queue.extend(zip(rows[r].tolist(), cols[c].tolist()))

    def step(self) -> Optional[Tuple[int, int]]:
        """次の有効なペアを1組対応付ける（無ければ None）"""
        while self._queue:
            i, j = self._queue.popleft()
            if self.matched1[i] or self.matched2[j]:
                continue
            self._record_match(i, j)
            return i, j
        return None

    def run(self) -> RefinementResult:
        while self.step() is not None:
            pass
        complete = bool(self.matched1.all())
        if not complete:
            logger.warning(
                f"Refinement stopped with {int(self.matched1.sum())}/{self.pair.n} users matched"
            )
        return RefinementResult(images=self.images.copy(), complete=complete, extended=self.extended)


def _scaled_threshold(gamma: float, scale: float) -> float:
    if math.isinf(gamma):
        return math.inf
    return gamma * scale


def refine_attr_sparse(
    pair: AttributedGraphPair, partial: PartialAlignment, gamma1: float
) -> RefinementResult:
    """AttrSparse 精緻化: N^u_π̃(i,j) ≥ γ1(n−2)q_u²"""
    if not gamma1 > 1.0:
        raise ParameterError(f"gamma1 must be > 1, got {gamma1}")
    params = pair.params
    threshold = _scaled_threshold(gamma1, (params.n - 2) * params.q_u ** 2)
    result = GreedyRefiner(pair, partial, threshold).run()
    logger.info(f"Sparse refinement extended {result.extended} users (complete={result.complete})")
    return result


def refine_attr_rich(
    pair: AttributedGraphPair, partial: PartialAlignment, gamma2: float, gamma3: float
) -> RefinementResult:
    """AttrRich 精緻化: N^u_π̃(i,j) ≥ γ2(n−2)q_u² または N^a(i,j) ≥ γ3 m q_a²"""
    if not (gamma2 > 1.0 and gamma3 > 1.0):
        raise ParameterError(f"gamma2 and gamma3 must be > 1, got {gamma2}, {gamma3}")
    params = pair.params
    user_threshold = _scaled_threshold(gamma2, (params.n - 2) * params.q_u ** 2)
    attr_threshold = _scaled_threshold(gamma3, params.m * params.q_a ** 2) if params.m > 0 else math.inf
    result = GreedyRefiner(pair, partial, user_threshold, attr_threshold).run()
    logger.info(f"Rich refinement extended {result.extended} users (complete={result.complete})")
    return result


def refine(
    pair: AttributedGraphPair,
    partial: PartialAlignment,
    regime: str = "auto",
    thresholds: Optional[RefineThresholds] = None,
    user_factor: float = DEFAULT_USER_LOG_FACTOR,
    attr_factor: float = DEFAULT_ATTR_LOG_FACTOR,
) -> Tuple[RefinementResult, str]:
    """
    レジームに応じた精緻化を実行

    Args:
        pair: グラフペア
        partial: 部分アライメント
        regime: "sparse" / "rich" / "auto"
        thresholds: 省略時はモデルパラメータと係数から計算
        user_factor: γ1, γ2 の目標値の係数
        attr_factor: γ3 の目標値の係数

    Returns:
        (精緻化結果, 実際に使ったレジーム)
    """
    if regime not in REGIMES:
        raise ParameterError(f"unknown regime '{regime}'")
    if regime == "auto":
        regime = select_regime(pair.params)
    thresholds = thresholds or refine_thresholds(pair.params, user_factor, attr_factor)
    if regime == ATTR_SPARSE:
        return refine_attr_sparse(pair, partial, thresholds.gamma1), regime
    return refine_attr_rich(pair, partial, thresholds.gamma2, thresholds.gamma3), regime
