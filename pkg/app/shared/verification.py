"""
組み込みの正解オラクル・性質チェック（verify サブコマンド用）
"""
import itertools
import logging
import math
from dataclasses import asdict, dataclass
from typing import Callable, Dict, List

import numpy as np

from app.alignment.bipartite_map import assignment_total, max_weight_assignment
from app.alignment.graph_model import AttributedGraph, ModelParams, generate_pair, make_rng
from app.alignment.refinement import f_eval, solve_f_upper
from app.alignment.tree_counting import (
    enumerate_trees,
    normalize,
    path_weight_table,
    tree_count,
    tree_count_bruteforce,
)
from app.config import ROOT_SOLVER_TOLERANCE
from app.shared.analysis import SUPPORTED_MOMENTS, cross_moment_enumerate, cross_moment_exact
from app.shared.pair_io import format_pair, parse_pair

# ログ設定
logger = logging.getLogger(__name__)


@dataclass
class CheckResult:
    name: str
    passed: bool
    cases: int
    detail: str = ""


def _random_params(rng: np.random.Generator, n: int, m: int) -> ModelParams:
    return ModelParams(
        n=n,
        m=m,
        q_u=float(rng.uniform(0.05, 0.95)),
        rho_u=float(rng.uniform(0.0, 1.0)),
        q_a=float(rng.uniform(0.05, 0.95)),
        rho_a=float(rng.uniform(0.0, 1.0)),
    )


def check_counting_oracle(rng: np.random.Generator, instances: int) -> CheckResult:
    """集合分割による W_{i,A} と木の総当たりの一致、および木の族の大きさ"""
    worst = 0.0
    for _ in range(instances):
        n = int(rng.integers(2, 9))
        m = int(rng.integers(1, 6))
        k = int(rng.integers(1, min(3, m, n - 1) + 1))
        params = _random_params(rng, n, m)
        pair = generate_pair(params, int(rng.integers(0, 2 ** 63)))
        norm = normalize(pair.g1, params)
        root = int(rng.integers(0, n))
        attrs = sorted(rng.choice(m, size=k, replace=False).tolist())
        fast = tree_count(path_weight_table(norm, root), attrs)
        slow = tree_count_bruteforce(norm, root, attrs)
        family = sum(1 for _ in enumerate_trees(n, root, attrs))
        if family != math.comb(n - 1, k) * math.factorial(k):
            return CheckResult("counting_oracle", False, instances, f"family size {family} at n={n}, k={k}")
        scale = max(1.0, abs(slow))
        worst = max(worst, abs(fast - slow) / scale)
        if abs(fast - slow) > 1e-9 * scale:
            return CheckResult("counting_oracle", False, instances, f"{fast} != {slow} at n={n}, k={k}")
    return CheckResult("counting_oracle", True, instances, f"max relative error {worst:.3g}")


def check_cross_moments() -> CheckResult:
    """閉形式の交差モーメントと4通り列挙の一致（5×6 グリッド）"""
    cases = 0
    for q in np.linspace(0.1, 0.5, 5):
        for rho in np.linspace(0.0, 1.0, 6):
            sigma = math.sqrt(q * (1.0 - q))
            for m1, m2 in SUPPORTED_MOMENTS:
                exact = cross_moment_exact(float(q), float(rho), m1, m2)
                enumerated = cross_moment_enumerate(float(q), float(rho), m1, m2) / sigma ** (m1 + m2)
                cases += 1
                if abs(exact - enumerated) > 1e-12 * max(1.0, abs(exact)):
                    return CheckResult(
                        "cross_moments", False, cases, f"({m1},{m2}) at q={q}, rho={rho}: {exact} != {enumerated}"
                    )
    return CheckResult("cross_moments", True, cases)


def check_root_solver() -> CheckResult:
    """f(γ)=y の解の残差と f^{-1}(1)=e"""
    grid = np.logspace(-8, 3, 45)
    for y in grid:
        gamma = solve_f_upper(float(y))
        if abs(f_eval(gamma) - y) > ROOT_SOLVER_TOLERANCE * max(1.0, y) or not gamma > 1.0:
            return CheckResult("root_solver", False, grid.size, f"residual too large at y={y}")
    if abs(solve_f_upper(1.0) - math.e) > 1e-9:
        return CheckResult("root_solver", False, grid.size + 1, "solve_f_upper(1) != e")
    return CheckResult("root_solver", True, grid.size + 1)


def check_assignment(rng: np.random.Generator, instances: int) -> CheckResult:
    """割当ソルバの総重みが n≤7 の全置換探索と一致"""
    for _ in range(instances):
        n = int(rng.integers(1, 8))
        w = rng.normal(size=(n, n))
        best = max(sum(w[i, p[i]] for i in range(n)) for p in itertools.permutations(range(n)))
        total = assignment_total(w, max_weight_assignment(w))
        if abs(total - best) > 1e-9 * max(1.0, abs(best)):
            return CheckResult("assignment", False, instances, f"{total} != {best} at n={n}")
    return CheckResult("assignment", True, instances)


def check_serialization(rng: np.random.Generator, instances: int) -> CheckResult:
    """ペアファイルの書き出しと読み込みで構造が保たれる"""
    for _ in range(instances):
        n = int(rng.integers(2, 12))
        m = int(rng.integers(0, 6))
        params = _random_params(rng, n, m)
        pair = generate_pair(params, int(rng.integers(0, 2 ** 63)))
        restored = parse_pair(format_pair(pair))
        same = (
            restored.g1 == pair.g1
            and restored.g2 == pair.g2
            and restored.truth == pair.truth
            and restored.params == pair.params
            and restored.seed == pair.seed
        )
        if not same:
            return CheckResult("serialization", False, instances, f"round trip mismatch at n={n}, m={m}")
    minimal = ModelParams(n=2, m=0, q_u=0.5, rho_u=0.5, q_a=0.5, rho_a=0.5)
    empty = generate_pair(minimal, 0)
    if not isinstance(parse_pair(format_pair(empty)).g1, AttributedGraph):
        return CheckResult("serialization", False, instances + 1, "minimal pair failed")
    return CheckResult("serialization", True, instances + 1)


def run_verification(seed: int, quick: bool = False) -> List[CheckResult]:
    """
    オラクル群をまとめて実行

    Args:
        seed: 乱数シード
        quick: True ならインスタンス数を減らす

    Returns:
        チェックごとの結果
    """
    rng = make_rng(seed)
    scale = 20 if quick else 200
    checks: List[Callable[[], CheckResult]] = [
        lambda: check_counting_oracle(rng, scale),
        check_cross_moments,
        check_root_solver,
        lambda: check_assignment(rng, scale // 4),
        lambda: check_serialization(rng, scale // 10),
    ]
    results = []
    for check in checks:
        result = check()
        level = logging.INFO if result.passed else logging.ERROR
        logger.log(level, f"verify {result.name}: {'ok' if result.passed else 'FAILED'} ({result.cases} cases) {result.detail}")
        results.append(result)
    return results


def verification_report(results: List[CheckResult]) -> Dict:
    return {
        "passed": all(r.passed for r in results),
        "checks": [asdict(r) for r in results],
    }
