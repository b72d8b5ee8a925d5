"""
相関のある属性付きErdős–Rényiグラフペアの生成モデル
"""
import logging
import math
import numbers
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, List, Optional, Tuple

import numpy as np

from app.config import RNG_NAME, RNG_VERSION
from app.shared.errors import ParameterError

# ログ設定
logger = logging.getLogger(__name__)


def validate_probability(name: str, q: float) -> None:
    """確率パラメータが開区間(0,1)にあるか検証"""
    if not (0.0 < q < 1.0) or math.isnan(q):
        raise ParameterError(f"{name} must lie in (0, 1), got {q}")


def validate_correlation(name: str, rho: float) -> None:
    """相関係数が[0,1]にあるか検証（負の相関は受け付けない）"""
    if not (0.0 <= rho <= 1.0) or math.isnan(rho):
        raise ParameterError(f"{name} must lie in [0, 1], got {rho}")


def validate_count(name: str, value, minimum: int) -> int:
    """整数パラメータを検証して int で返す（12.0 のような整数値の float も受け付ける）"""
    if isinstance(value, bool) or not isinstance(value, (numbers.Integral, float)):
        raise ParameterError(f"{name} must be an integer >= {minimum}, got {value!r}")
    if isinstance(value, float) and not value.is_integer():
        raise ParameterError(f"{name} must be an integer >= {minimum}, got {value!r}")
    if value < minimum:
        raise ParameterError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def edge_joint_probabilities(q: float, rho: float) -> Tuple[float, float, float, float]:
    """
    相関ベルヌーイ対の同時分布 (P11, P10, P01, P00) を返す

    周辺分布 Bern(q)、相関係数 rho となる唯一の 2x2 同時分布。
    """
    validate_probability("q", q)
    validate_correlation("rho", rho)
    sigma2 = q * (1.0 - q)
    p11 = q * q + rho * sigma2
    p10 = sigma2 * (1.0 - rho)
    p00 = (1.0 - q) ** 2 + rho * sigma2
    return p11, p10, p10, p00


def make_rng(seed: int) -> np.random.Generator:
    """シードから決定的な乱数生成器を作る"""
    if seed < 0 or seed >= 2 ** 64:
        raise ParameterError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return np.random.Generator(np.random.PCG64(seed))


def sample_correlated_edges(
    q: float, rho: float, size: int, rng: np.random.Generator
) -> Tuple[np.ndarray, np.ndarray]:
    """相関のある辺指示変数の対を size 個まとめて生成"""
    p11, p10, p01, _ = edge_joint_probabilities(q, rho)
    u = rng.random(size)
    first = u < p11 + p10
    second = (u < p11) | ((u >= p11 + p10) & (u < p11 + p10 + p01))
    return first, second


def sample_correlated_edge(q: float, rho: float, rng: np.random.Generator) -> Tuple[int, int]:
    """相関のある辺指示変数の対を1組生成"""
    first, second = sample_correlated_edges(q, rho, 1, rng)
    return int(first[0]), int(second[0])


@dataclass(frozen=True)
class ModelParams:
    """属性付きグラフペアモデルの6パラメータ"""

    n: int
    m: int
    q_u: float
    rho_u: float
    q_a: float
    rho_a: float

    def __post_init__(self):
        object.__setattr__(self, "n", validate_count("n", self.n, 2))
        object.__setattr__(self, "m", validate_count("m", self.m, 0))
        validate_probability("q_u", self.q_u)
        validate_probability("q_a", self.q_a)
        validate_correlation("rho_u", self.rho_u)
        validate_correlation("rho_a", self.rho_a)

    @property
    def sigma2_u(self) -> float:
        return self.q_u * (1.0 - self.q_u)

    @property
    def sigma2_a(self) -> float:
        return self.q_a * (1.0 - self.q_a)

    @property
    def s_u(self) -> float:
        return self.q_u + self.rho_u * (1.0 - self.q_u)

    @property
    def s_a(self) -> float:
        return self.q_a + self.rho_a * (1.0 - self.q_a)

    def seeded_view(self) -> Tuple[float, float]:
        """シード付きアライメントの (p, s) を復元"""
        s = self.s_u
        return self.q_u / s, s

    def to_dict(self) -> Dict[str, float]:
        return {
            "n": self.n,
            "m": self.m,
            "q_u": self.q_u,
            "rho_u": self.rho_u,
            "q_a": self.q_a,
            "rho_a": self.rho_a,
        }

    @classmethod
    def from_seeded(cls, total: int, alpha: float, p: float, s: float) -> "ModelParams":
        return seeded_mode_params(total, alpha, p, s)


def seeded_mode_params(total: int, alpha: float, p: float, s: float) -> ModelParams:
    """
    シード付きグラフアライメントを属性付きモデルに対応させる

    Args:
        total: 頂点総数 N
        alpha: シードの割合
        p: 基底グラフの辺確率
        s: サブサンプリング確率

    Returns:
        m=⌊Nα⌋ 個の属性をシードとみなしたモデルパラメータ。
        属性モデルではシード同士の辺は存在しない点に注意。
    """
    if not 0.0 < alpha < 1.0:
        raise ParameterError(f"alpha must lie in (0, 1), got {alpha}")
    if not 0.0 < p < 1.0:
        raise ParameterError(f"p must lie in (0, 1), got {p}")
    if not 0.0 < s <= 1.0:
        raise ParameterError(f"s must lie in (0, 1], got {s}")
    if p * s >= 1.0:
        raise ParameterError("p * s must be < 1")

    m = int(math.floor(total * alpha))
    n = total - m
    if m == 0 or n < 2:
        raise ParameterError(f"degenerate seeded split: n={n}, m={m}")

    q = p * s
    rho = min(1.0, s * (1.0 - p) / (1.0 - q))
    return ModelParams(n=n, m=m, q_u=q, rho_u=rho, q_a=q, rho_a=rho)


def _freeze(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class Permutation:
    """{0,…,n−1} 上の全単射（images[i] が i の像）"""

    images: np.ndarray

    def __post_init__(self):
        images = np.asarray(self.images, dtype=np.int64).copy()
        n = images.size
        if images.ndim != 1 or not np.array_equal(np.sort(images), np.arange(n)):
            raise ParameterError("permutation must be a bijection on {0, ..., n-1}")
        object.__setattr__(self, "images", _freeze(images))

    @classmethod
    def identity(cls, n: int) -> "Permutation":
        return cls(np.arange(n))

    def __len__(self) -> int:
        return int(self.images.size)

    def __getitem__(self, i: int) -> int:
        return int(self.images[i])

    def __eq__(self, other) -> bool:
        if not isinstance(other, Permutation):
            return NotImplemented
        return np.array_equal(self.images, other.images)

    def __hash__(self) -> int:
        return hash(self.images.tobytes())

    def inverse(self) -> "Permutation":
        inv = np.empty_like(self.images)
        inv[self.images] = np.arange(len(self))
        return Permutation(inv)

    def to_list(self) -> List[int]:
        return [int(v) for v in self.images]


@dataclass(frozen=True, eq=False)
class AttributedGraph:
    """
    ユーザ間隣接行列とユーザ・属性接続行列を持つ属性付きグラフ

    どちらもビットパックして保持し、参照時に bool 配列へ展開する。
    """

    n: int
    m: int
    user_bits: np.ndarray
    attr_bits: np.ndarray

    @classmethod
    def from_dense(cls, user_adj: np.ndarray, attr_adj: np.ndarray) -> "AttributedGraph":
        user_adj = np.asarray(user_adj, dtype=bool)
        attr_adj = np.asarray(attr_adj, dtype=bool)
        if user_adj.ndim != 2 or user_adj.shape[0] != user_adj.shape[1]:
            raise ParameterError(f"user adjacency must be square, got {user_adj.shape}")
        n = user_adj.shape[0]
        if attr_adj.ndim != 2 or attr_adj.shape[0] != n:
            raise ParameterError(f"attribute incidence must have {n} rows, got {attr_adj.shape}")
        if not np.array_equal(user_adj, user_adj.T):
            raise ParameterError("user adjacency must be symmetric")
        if user_adj.diagonal().any():
            raise ParameterError("user adjacency diagonal must be empty")
        m = attr_adj.shape[1]
        return cls(
            n=n,
            m=m,
            user_bits=_freeze(np.packbits(user_adj, axis=1)),
            attr_bits=_freeze(np.packbits(attr_adj, axis=1)),
        )

    @classmethod
    def empty(cls, n: int, m: int) -> "AttributedGraph":
        return cls.from_dense(np.zeros((n, n), dtype=bool), np.zeros((n, m), dtype=bool))

    @cached_property
    def user_adj(self) -> np.ndarray:
        return _freeze(np.unpackbits(self.user_bits, axis=1, count=self.n).astype(bool))

    @cached_property
    def attr_adj(self) -> np.ndarray:
        if self.m == 0:
            return _freeze(np.zeros((self.n, 0), dtype=bool))
        return _freeze(np.unpackbits(self.attr_bits, axis=1, count=self.m).astype(bool))

    def user_edges(self) -> List[Tuple[int, int]]:
        """i<j のユーザ間辺リスト（辞書順）"""
        rows, cols = np.nonzero(np.triu(self.user_adj, k=1))
        return [(int(i), int(j)) for i, j in zip(rows, cols)]

    def attr_edges(self) -> List[Tuple[int, int]]:
        rows, cols = np.nonzero(self.attr_adj)
        return [(int(i), int(a)) for i, a in zip(rows, cols)]

    def __eq__(self, other) -> bool:
        if not isinstance(other, AttributedGraph):
            return NotImplemented
        return (
            self.n == other.n
            and self.m == other.m
            and np.array_equal(self.user_adj, other.user_adj)
            and np.array_equal(self.attr_adj, other.attr_adj)
        )

    __hash__ = None


@dataclass(frozen=True)
class AttributedGraphPair:
    """グラフペア (G1, G2′)、真の置換 Π*、生成パラメータ、シード"""

    g1: AttributedGraph
    g2: AttributedGraph
    truth: Permutation
    params: ModelParams
    seed: int = 0
    meta: Dict[str, str] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if (self.g1.n, self.g1.m) != (self.g2.n, self.g2.m):
            raise ParameterError("both graphs must share n and m")
        if (self.g1.n, self.g1.m) != (self.params.n, self.params.m):
            raise ParameterError("graph dimensions disagree with params")
        if len(self.truth) != self.g1.n:
            raise ParameterError("truth permutation has wrong length")

    @property
    def n(self) -> int:
        return self.g1.n

    @property
    def m(self) -> int:
        return self.g1.m


class PairGenerator:
    """相関グラフペアの生成器"""

    def __init__(self, params: ModelParams, identity_truth: bool = False):
        self.params = params
        self.identity_truth = identity_truth

    def generate(self, seed: int) -> AttributedGraphPair:
        """
        シードからグラフペアを生成

        乱数の消費順は 置換 → ユーザ間辺 → ユーザ・属性辺 で固定。
        identity_truth のときは置換の抽選を行わない。
        """
        params = self.params
        n, m = params.n, params.m
        rng = make_rng(seed)

        if self.identity_truth:
            perm = np.arange(n)
        else:
            perm = rng.permutation(n)

        rows, cols = np.triu_indices(n, k=1)
        first, second = sample_correlated_edges(params.q_u, params.rho_u, rows.size, rng)
        user1 = np.zeros((n, n), dtype=bool)
        user1[rows, cols] = first
        user1 |= user1.T
        aligned = np.zeros((n, n), dtype=bool)
        aligned[rows, cols] = second
        aligned |= aligned.T
        # G2′ の辺 (Π*(i), Π*(j)) が G1 の (i, j) と対になる
        user2 = np.zeros((n, n), dtype=bool)
        user2[np.ix_(perm, perm)] = aligned

        first, second = sample_correlated_edges(params.q_a, params.rho_a, n * m, rng)
        attr1 = first.reshape(n, m)
        attr2 = np.zeros((n, m), dtype=bool)
        attr2[perm] = second.reshape(n, m)

        pair = AttributedGraphPair(
            g1=AttributedGraph.from_dense(user1, attr1),
            g2=AttributedGraph.from_dense(user2, attr2),
            truth=Permutation(perm),
            params=params,
            seed=seed,
            meta={"rng": RNG_NAME, "rng_version": str(RNG_VERSION)},
        )
        logger.debug(
            f"Generated pair n={n} m={m} seed={seed}: "
            f"{int(user1.sum()) // 2} / {int(user2.sum()) // 2} user edges"
        )
        return pair


def generate_pair(
    params: ModelParams, seed: int, identity_truth: bool = False
) -> AttributedGraphPair:
    """
    相関属性付きグラフペアを生成するメイン関数

    Args:
        params: モデルパラメータ
        seed: 64ビット乱数シード
        identity_truth: True なら Π* を恒等置換に固定（テスト用）

    Returns:
        生成されたグラフペア
    """
    return PairGenerator(params, identity_truth=identity_truth).generate(seed)


def relabel_pair(pair: AttributedGraphPair, psi: Permutation) -> AttributedGraphPair:
    """G2′ のユーザラベルを psi で付け替えたペアを返す（真の置換も合成する）"""
    perm = psi.images
    n = pair.n
    user2 = np.zeros((n, n), dtype=bool)
    user2[np.ix_(perm, perm)] = pair.g2.user_adj
    attr2 = np.zeros((n, pair.m), dtype=bool)
    attr2[perm] = pair.g2.attr_adj
    return AttributedGraphPair(
        g1=pair.g1,
        g2=AttributedGraph.from_dense(user2, attr2),
        truth=Permutation(perm[pair.truth.images]),
        params=pair.params,
        seed=pair.seed,
    )


def truth_aligned_indicators(pair: AttributedGraphPair) -> Dict[str, Tuple[np.ndarray, np.ndarray]]:
    """真の対応で並べた辺指示変数（相関の検査用）"""
    perm = pair.truth.images
    rows, cols = np.triu_indices(pair.n, k=1)
    user1 = pair.g1.user_adj[rows, cols]
    user2 = pair.g2.user_adj[perm[rows], perm[cols]]
    attr1 = pair.g1.attr_adj.ravel()
    attr2 = pair.g2.attr_adj[perm].ravel()
    return {"user": (user1, user2), "attr": (attr1, attr2)}


def sample_correlation(first: np.ndarray, second: np.ndarray) -> Optional[float]:
    """2つの指示変数列の標本相関（分散0なら None）"""
    x = first.astype(float)
    y = second.astype(float)
    if x.std() == 0.0 or y.std() == 0.0:
        return None
    return float(np.corrcoef(x, y)[0, 1])
