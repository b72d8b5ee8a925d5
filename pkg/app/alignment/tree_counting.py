"""
属性付き木の部分グラフカウントによるアライメント

各ユーザ i と k 個の属性集合 A について、根 i から長さ2のパスで A の各属性へ
至る木の族の重み付きカウント W_{i,A} を計算し、特徴ベクトルの内積を
類似度スコア Φ とする。
"""
import itertools
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import gammaln
from sympy.utilities.iterables import multiset_partitions

from app.alignment.graph_model import AttributedGraph, AttributedGraphPair, ModelParams
from app.config import BRUTEFORCE_MAX_K, BRUTEFORCE_MAX_N, DEFAULT_C, SUBSET_CHUNK_SIZE
from app.shared.errors import GuardrailError, ParameterError

# ログ設定
logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class NormalizedAdjacency:
    """正規化隣接行列 Ã^u = A^u − q_u（対角は0）と Ã^a = A^a − q_a"""

    user_mat: np.ndarray
    attr_mat: np.ndarray

    @property
    def n(self) -> int:
        return self.user_mat.shape[0]

    @property
    def m(self) -> int:
        return self.attr_mat.shape[1]


@dataclass(frozen=True, eq=False)
class PathWeightTable:
    """根 i に対する長さ2パスの重み表 M[a][u] = Ã^u_{iu}·Ã^a_{ua}"""

    root: int
    table: np.ndarray


@dataclass(frozen=True)
class AttributedTree:
    """ユーザ間辺とユーザ・属性辺のリストで表した属性付き木"""

    user_edges: Tuple[Tuple[int, int], ...] = ()
    attr_edges: Tuple[Tuple[int, int], ...] = ()


@dataclass(frozen=True, eq=False)
class SimilarityMatrix:
    """類似度スコア行列 scores[i][j] = Φ_ij"""

    scores: np.ndarray

    @property
    def n(self) -> int:
        return self.scores.shape[0]


@dataclass
class PartialAlignment:
    """
    部分アライメント

    matched: G1 側のユーザ集合 I（昇順）
    mapping: I から G2′ のユーザへの単射
    conflicts: 曖昧さのため除外したユーザ
    """

    matched: List[int] = field(default_factory=list)
    mapping: Dict[int, int] = field(default_factory=dict)
    conflicts: List[int] = field(default_factory=list)

    def __post_init__(self):
        if sorted(self.mapping) != sorted(self.matched):
            raise ParameterError("matched set and mapping domain must coincide")
        if len(set(self.mapping.values())) != len(self.mapping):
            raise ParameterError("partial mapping must be injective")
        overlap = sorted(set(self.conflicts) & set(self.mapping))
        if overlap:
            raise ParameterError(f"conflicts overlap the matched set: {overlap}")

    @classmethod
    def from_mapping(cls, mapping: Dict[int, int], conflicts: Sequence[int] = ()) -> "PartialAlignment":
        mapping = {int(i): int(j) for i, j in mapping.items()}
        return cls(matched=sorted(mapping), mapping=mapping, conflicts=sorted(int(c) for c in conflicts))

    def as_array(self, n: int) -> np.ndarray:
        """未対応を −1 とした長さ n の配列"""
        images = np.full(n, -1, dtype=np.int64)
        for i, j in self.mapping.items():
            images[i] = j
        return images


def normalize(graph: AttributedGraph, params: ModelParams) -> NormalizedAdjacency:
    """隣接行列を正規化する（ユーザ行列の対角は0に固定）"""
    if (graph.n, graph.m) != (params.n, params.m):
        raise ParameterError("graph dimensions disagree with params")
    user_mat = graph.user_adj.astype(np.float64) - params.q_u
    np.fill_diagonal(user_mat, 0.0)
    attr_mat = graph.attr_adj.astype(np.float64) - params.q_a
    return NormalizedAdjacency(user_mat=user_mat, attr_mat=attr_mat)


def tree_weight(tree: AttributedTree, norm: NormalizedAdjacency) -> float:
    """木 S の重み（各辺の正規化値の積）。S が部分グラフである必要はない"""
    n, m = norm.n, norm.m
    weight = 1.0
    for i, j in tree.user_edges:
        if not (0 <= i < n and 0 <= j < n) or i == j:
            raise ParameterError(f"user edge ({i}, {j}) out of range")
        weight *= norm.user_mat[i, j]
    for u, a in tree.attr_edges:
        if not (0 <= u < n and 0 <= a < m):
            raise ParameterError(f"attribute edge ({u}, {a}) out of range")
        weight *= norm.attr_mat[u, a]
    return float(weight)


def path_weight_table(norm: NormalizedAdjacency, i: int) -> PathWeightTable:
    """根 i のパス重み表を作る（列 i は0）"""
    if not 0 <= i < norm.n:
        raise ParameterError(f"root {i} out of range")
    table = norm.attr_mat.T * norm.user_mat[i][np.newaxis, :]
    table[:, i] = 0.0
    return PathWeightTable(root=i, table=table)


@lru_cache(maxsize=None)
def set_partition_terms(k: int) -> Tuple[Tuple[int, Tuple[Tuple[int, ...], ...]], ...]:
    """
    {0..k−1} の集合分割と Möbius 係数 ∏(−1)^{|B|−1}(|B|−1)! の組

    単射和 Σ_φ ∏ M[a][φ(a)] = Σ_P μ(P) ∏_{B∈P} S_B を与える。
    """
    terms = []
    for partition in multiset_partitions(list(range(k))):
        blocks = tuple(tuple(block) for block in partition)
        coef = 1
        for block in blocks:
            size = len(block)
            coef *= (-1) ** (size - 1) * math.factorial(size - 1)
        terms.append((coef, blocks))
    return tuple(terms)


def _check_attribute_subset(attrs: Sequence[int], n: int, m: int) -> Tuple[int, ...]:
    attrs = tuple(int(a) for a in attrs)
    k = len(attrs)
    if k < 1:
        raise ParameterError("attribute subset must be non-empty")
    if len(set(attrs)) != k:
        raise ParameterError(f"attributes must be distinct, got {attrs}")
    if any(not 0 <= a < m for a in attrs):
        raise ParameterError(f"attribute index out of range in {attrs}")
    if k > n - 1:
        raise ParameterError(f"k={k} exceeds n-1={n - 1}: the tree family is empty")
    return attrs


def tree_count(table: PathWeightTable, attrs: Sequence[int]) -> float:
    """
    W_{i,A} を集合分割の恒等式で計算

    Args:
        table: 根 i のパス重み表
        attrs: 大きさ k の属性部分集合

    Returns:
        単射 φ: A → users\\{i} 全体にわたる ∏ M[a][φ(a)] の和
    """
    m, n = table.table.shape
    attrs = _check_attribute_subset(attrs, n, m)
    rows = table.table[list(attrs)]
    block_sums: Dict[Tuple[int, ...], float] = {}
    total = 0.0
    for coef, blocks in set_partition_terms(len(attrs)):
        term = float(coef)
        for block in blocks:
            if block not in block_sums:
                block_sums[block] = float(np.prod(rows[list(block)], axis=0).sum())
            term *= block_sums[block]
        total += term
    return total


def enumerate_trees(n: int, root: int, attrs: Sequence[int]) -> Iterator[AttributedTree]:
    """𝒢_{i,A} の全ての木を列挙（ポートの順序付き組ごとに1本）"""
    others = [u for u in range(n) if u != root]
    for ports in itertools.permutations(others, len(attrs)):
        yield AttributedTree(
            user_edges=tuple((root, u) for u in ports),
            attr_edges=tuple((u, a) for u, a in zip(ports, attrs)),
        )


def tree_count_bruteforce(norm: NormalizedAdjacency, i: int, attrs: Sequence[int]) -> float:
    """W_{i,A} を定義どおり木の列挙で計算する正解オラクル"""
    attrs = tuple(attrs)
    if norm.n > BRUTEFORCE_MAX_N or len(attrs) > BRUTEFORCE_MAX_K:
        raise GuardrailError(
            f"brute force limited to n<={BRUTEFORCE_MAX_N}, k<={BRUTEFORCE_MAX_K}"
        )
    if not 0 <= i < norm.n:
        raise ParameterError(f"root {i} out of range")
    attrs = _check_attribute_subset(attrs, norm.n, norm.m)
    return sum(tree_weight(tree, norm) for tree in enumerate_trees(norm.n, i, attrs))


def colex_subsets(m: int, k: int) -> Iterator[Tuple[int, ...]]:
    """大きさ k の部分集合を余辞書式順序で列挙"""
    if k == 0:
        yield ()
        return
    for top in range(k - 1, m):
        for rest in colex_subsets(top, k - 1):
            yield rest + (top,)


def _chunked(items: Iterable[Tuple[int, ...]], size: int) -> Iterator[List[Tuple[int, ...]]]:
    iterator = iter(items)
    while True:
        chunk = list(itertools.islice(iterator, size))
        if not chunk:
            return
        yield chunk


def feature_block(norm: NormalizedAdjacency, subsets: np.ndarray) -> np.ndarray:
    """
    全ての根と部分集合ブロックについて W_{·,A} をまとめて計算

    Args:
        norm: 正規化隣接行列
        subsets: 形状 (c, k) の属性インデックス配列

    Returns:
        形状 (n, c) の配列。列 t が subsets[t] に対応する特徴量
    """
    subsets = np.asarray(subsets, dtype=np.int64)
    count, k = subsets.shape
    user_powers = {1: norm.user_mat}
    for b in range(2, k + 1):
        user_powers[b] = user_powers[b - 1] * norm.user_mat

    # S_B(i) = Σ_u (Ã^u_{iu})^{|B|} ∏_{a∈B} Ã^a_{ua}
    block_sums: Dict[Tuple[int, ...], np.ndarray] = {}
    features = np.zeros((norm.n, count))
    for coef, blocks in set_partition_terms(k):
        term = np.full((norm.n, count), float(coef))
        for block in blocks:
            if block not in block_sums:
                attr_product = np.prod(norm.attr_mat[:, subsets[:, list(block)]], axis=2)
                block_sums[block] = user_powers[len(block)] @ attr_product
            term *= block_sums[block]
        features += term
    return features


def check_branch_count(params: ModelParams, k: int) -> None:
    if not 1 <= k <= min(params.m, params.n - 1):
        raise ParameterError(f"k must satisfy 1 <= k <= min(m, n-1), got k={k}")


class SubgraphCounter:
    """グラフペアに対する特徴量・類似度スコアの計算器"""

    def __init__(self, pair: AttributedGraphPair, k: int, chunk_size: Optional[int] = None):
        check_branch_count(pair.params, k)
        self.pair = pair
        self.k = k
        self.chunk_size = chunk_size or SUBSET_CHUNK_SIZE
        self.norm1 = normalize(pair.g1, pair.params)
        self.norm2 = normalize(pair.g2, pair.params)

    def similarity(self) -> SimilarityMatrix:
        """
        部分集合をブロック単位で流しながら Φ = Σ_A W_A(G1) W_A(G2′)^T を累積

        メモリは O(n² + n·chunk)。累積順は余辞書式順序で固定。
        """
        n = self.pair.n
        scores = np.zeros((n, n))
        blocks = 0
        for chunk in _chunked(colex_subsets(self.pair.m, self.k), self.chunk_size):
            subsets = np.array(chunk, dtype=np.int64)
            w1 = feature_block(self.norm1, subsets)
            w2 = feature_block(self.norm2, subsets)
            scores += w1 @ w2.T
            blocks += 1
        logger.debug(f"Accumulated similarity over {blocks} subset blocks (k={self.k})")
        return SimilarityMatrix(scores=scores)


def similarity_matrix(
    pair: AttributedGraphPair, k: int, chunk_size: Optional[int] = None
) -> SimilarityMatrix:
    """類似度スコア行列を計算するメイン関数"""
    return SubgraphCounter(pair, k, chunk_size=chunk_size).similarity()


def log_expected_score(params: ModelParams, k: int) -> float:
    """正しいペアの期待スコア E[Φ_ii] の対数（相関0なら −inf）"""
    check_branch_count(params, k)
    if params.rho_u == 0.0 or params.rho_a == 0.0:
        return -math.inf
    n, m = params.n, params.m
    log_choose_m = gammaln(m + 1) - gammaln(k + 1) - gammaln(m - k + 1)
    log_choose_n = gammaln(n) - gammaln(k + 1) - gammaln(n - k)
    return float(
        log_choose_m
        + k * math.log(params.rho_u * params.sigma2_u)
        + k * math.log(params.rho_a * params.sigma2_a)
        + log_choose_n
        + gammaln(k + 1)
    )


def threshold_tau(params: ModelParams, k: int, c: float = DEFAULT_C) -> float:
    """しきい値 τ = c·E[Φ_ii]（対数空間で評価）"""
    if not 0.0 < c < 1.0:
        raise ParameterError(f"c must lie in (0, 1), got {c}")
    log_value = log_expected_score(params, k)
    if log_value == -math.inf:
        return 0.0
    return c * math.exp(log_value)


def partial_from_scores(scores: np.ndarray, tau: float) -> PartialAlignment:
    """
    τ 以上のペアから相互に一意なものだけを採用

    i の候補が j だけで、かつ j の候補が i だけのときに限り π̂(i)=j とする。
    それ以外で候補を持つユーザは conflicts に記録して除外する。
    """
    qualifying = scores >= tau
    row_counts = qualifying.sum(axis=1)
    col_counts = qualifying.sum(axis=0)
    mapping: Dict[int, int] = {}
    conflicts: List[int] = []
    for i in np.flatnonzero(row_counts):
        i = int(i)
        if row_counts[i] == 1:
            j = int(np.flatnonzero(qualifying[i])[0])
            if col_counts[j] == 1:
                mapping[i] = j
                continue
        conflicts.append(i)
    return PartialAlignment.from_mapping(mapping, conflicts)


def align_by_counting(
    pair: AttributedGraphPair, k: int, c: float = DEFAULT_C, chunk_size: Optional[int] = None
) -> PartialAlignment:
    """
    部分グラフカウントによるアライメント

    Args:
        pair: グラフペア
        k: 分岐数（属性部分集合の大きさ）
        c: しきい値定数 (0,1)

    Returns:
        部分アライメント（空でもよい）
    """
    tau = threshold_tau(pair.params, k, c)
    scores = similarity_matrix(pair, k, chunk_size=chunk_size).scores
    partial = partial_from_scores(scores, tau)
    logger.info(
        f"Counting alignment: tau={tau:.6g}, matched={len(partial.matched)}/{pair.n}, "
        f"conflicts={len(partial.conflicts)}"
    )
    if partial.conflicts:
        logger.warning(f"Dropped {len(partial.conflicts)} ambiguous users")
    return partial
