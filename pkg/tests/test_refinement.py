"""
精緻化アルゴリズムのテスト
"""
import math

import numpy as np
import pytest
from hypothesis import given
import hypothesis.strategies as st

from app.alignment.graph_model import (
    AttributedGraph,
    AttributedGraphPair,
    ModelParams,
    Permutation,
    generate_pair,
    make_rng,
)
from app.alignment.refinement import (
    ATTR_RICH,
    ATTR_SPARSE,
    GreedyRefiner,
    count_common_attribute_neighbors,
    count_common_user_neighbors,
    f_eval,
    recount_user_neighbors,
    refine,
    refine_attr_rich,
    refine_attr_sparse,
    refine_thresholds,
    select_regime,
    solve_f_upper,
)
from app.alignment.tree_counting import PartialAlignment
from app.shared.errors import ParameterError


def _truth_subset(pair, fraction, rng):
    n = pair.n
    chosen = rng.choice(n, size=int(round(fraction * n)), replace=False)
    return PartialAlignment.from_mapping({int(i): int(pair.truth[int(i)]) for i in chosen})


def test_f_eval_values():
    assert f_eval(1.0) == 0.0
    assert f_eval(math.e) == pytest.approx(1.0)
    assert f_eval(2.0) == pytest.approx(2 * math.log(2) - 1)
    with pytest.raises(ParameterError):
        f_eval(0.0)


def test_solve_f_upper_examples():
    assert solve_f_upper(1.0) == pytest.approx(math.e, abs=1e-9)
    assert solve_f_upper(2 * math.log(2) - 1) == pytest.approx(2.0, abs=1e-9)
    tiny = solve_f_upper(1e-8)
    assert tiny > 1.0
    assert abs(f_eval(tiny) - 1e-8) <= 1e-12
    with pytest.raises(ParameterError):
        solve_f_upper(0.0)


@pytest.mark.parametrize("y", np.logspace(-8, 3, 23).tolist())
def test_solve_f_upper_residual(y):
    gamma = solve_f_upper(y)
    assert gamma > 1.0
    assert abs(f_eval(gamma) - y) <= 1e-12 * max(1.0, y)


@given(st.floats(1.001, 1e4))
def test_solve_inverts_f(x):
    assert solve_f_upper(f_eval(x)) == pytest.approx(x, rel=1e-9)


def test_refine_thresholds_without_attributes():
    params = ModelParams(n=100, m=0, q_u=0.3, rho_u=0.9, q_a=0.3, rho_a=0.9)
    thresholds = refine_thresholds(params)
    assert thresholds.gamma1 == thresholds.gamma2 > 1.0
    assert math.isinf(thresholds.gamma3)


def test_refine_thresholds_factor_scales_target():
    params = ModelParams(n=100, m=30, q_u=0.5, rho_u=1.0, q_a=0.5, rho_a=1.0)
    default = refine_thresholds(params)
    assert f_eval(default.gamma1) == pytest.approx(3.0 * math.log(100) / (98 * 0.25), rel=1e-10)
    assert default.gamma1 * 98 * 0.25 == pytest.approx(54.8, abs=0.05)
    lowered = refine_thresholds(params, user_factor=0.33)
    assert f_eval(lowered.gamma1) == pytest.approx(0.33 * math.log(100) / (98 * 0.25), rel=1e-10)
    assert 33.0 < lowered.gamma1 * 98 * 0.25 < 34.0
    assert lowered.gamma3 == default.gamma3
    assert refine_thresholds(params, attr_factor=0.5).gamma3 < default.gamma3


@pytest.mark.parametrize("factors", [(0.0, 3.0), (3.0, -1.0)])
def test_refine_thresholds_rejects_bad_factor(factors):
    params = ModelParams(n=100, m=30, q_u=0.5, rho_u=1.0, q_a=0.5, rho_a=1.0)
    with pytest.raises(ParameterError):
        refine_thresholds(params, *factors)


def test_lower_user_factor_lets_small_graphs_extend():
    # n=100 では既定の係数のしきい値（約54.8）に真のペアの共通近傍数が届かない
    params = ModelParams(n=100, m=30, q_u=0.5, rho_u=1.0, q_a=0.5, rho_a=1.0)
    pair = generate_pair(params, 41)
    partial = _truth_subset(pair, 0.7, make_rng(41))
    stuck, _ = refine(pair, partial)
    assert stuck.extended == 0
    assert not stuck.complete
    extended, regime = refine(pair, partial, user_factor=0.33)
    assert regime == ATTR_RICH
    assert extended.extended > 0
    assert all(extended.images[i] == j for i, j in partial.mapping.items())


def test_select_regime():
    assert select_regime(ModelParams(n=100, m=1000, q_u=0.1, rho_u=0.5, q_a=0.5, rho_a=0.5)) == ATTR_RICH
    assert select_regime(ModelParams(n=100, m=0, q_u=0.1, rho_u=0.5, q_a=0.5, rho_a=0.5)) == ATTR_SPARSE


def test_select_regime_boundary_goes_to_rich():
    n = 16
    params = ModelParams(n=n, m=8, q_u=0.1, rho_u=0.5, q_a=0.5, rho_a=math.log(n) / 4.0)
    assert params.m * params.q_a * params.rho_a == math.log(n)
    assert select_regime(params) == ATTR_RICH


def _hand_pair():
    params = ModelParams(n=4, m=3, q_u=0.5, rho_u=0.5, q_a=0.5, rho_a=0.5)
    user1 = np.zeros((4, 4), dtype=bool)
    user1[1, 2] = user1[2, 1] = user1[1, 3] = user1[3, 1] = True
    user2 = np.zeros((4, 4), dtype=bool)
    user2[1, 2] = user2[2, 1] = True
    attr1 = np.zeros((4, 3), dtype=bool)
    attr1[0, [0, 1]] = True
    attr2 = np.zeros((4, 3), dtype=bool)
    attr2[2, [1, 2]] = True
    return AttributedGraphPair(
        g1=AttributedGraph.from_dense(user1, attr1),
        g2=AttributedGraph.from_dense(user2, attr2),
        truth=Permutation.identity(4),
        params=params,
    )


def test_count_common_user_neighbors_hand_example():
    pair = _hand_pair()
    assert count_common_user_neighbors(pair, {2: 2, 3: 3}, 1, 1) == 1
    assert count_common_user_neighbors(pair, {}, 1, 1) == 0
    assert count_common_user_neighbors(pair, {2: 2, 3: 3}, 0, 1) == 0
    with pytest.raises(ParameterError):
        count_common_user_neighbors(pair, {}, 4, 0)


def test_count_common_attribute_neighbors_hand_example():
    pair = _hand_pair()
    assert count_common_attribute_neighbors(pair, 0, 2) == 1
    no_attrs = ModelParams(n=3, m=0, q_u=0.5, rho_u=0.5, q_a=0.5, rho_a=0.5)
    empty = generate_pair(no_attrs, 1)
    assert count_common_attribute_neighbors(empty, 0, 1) == 0


def test_attribute_neighbors_with_perfect_attribute_correlation():
    params = ModelParams(n=20, m=15, q_u=0.3, rho_u=0.2, q_a=0.4, rho_a=1.0)
    pair = generate_pair(params, 8, identity_truth=True)
    for i in range(20):
        assert count_common_attribute_neighbors(pair, i, i) == int(pair.g1.attr_adj[i].sum())


def test_full_partial_is_returned_unchanged(small_pair):
    partial = PartialAlignment.from_mapping({i: small_pair.truth[i] for i in range(small_pair.n)})
    result = refine_attr_sparse(small_pair, partial, 2.0)
    assert result.complete
    assert result.extended == 0
    assert np.array_equal(result.images, small_pair.truth.images)


def test_absurd_thresholds_do_not_extend(small_pair):
    partial = PartialAlignment.from_mapping({0: small_pair.truth[0]})
    sparse = refine_attr_sparse(small_pair, partial, 1e6)
    assert not sparse.complete
    assert sparse.mapping() == partial.mapping
    rich = refine_attr_rich(small_pair, partial, 1e6, 1e6)
    assert not rich.complete
    assert rich.mapping() == partial.mapping


def test_rich_without_attributes_matches_sparse():
    params = ModelParams(n=60, m=0, q_u=0.4, rho_u=0.95, q_a=0.5, rho_a=0.5)
    pair = generate_pair(params, 21)
    partial = _truth_subset(pair, 0.8, make_rng(3))
    sparse = refine_attr_sparse(pair, partial, 1.5)
    rich = refine_attr_rich(pair, partial, 1.5, 1.5)
    assert np.array_equal(sparse.images, rich.images)


def test_gamma_must_exceed_one(small_pair):
    with pytest.raises(ParameterError):
        refine_attr_sparse(small_pair, PartialAlignment(), 1.0)
    with pytest.raises(ParameterError):
        refine_attr_rich(small_pair, PartialAlignment(), 2.0, 0.5)


def test_non_injective_partial_is_rejected(small_pair):
    partial = PartialAlignment.__new__(PartialAlignment)
    partial.matched = [0, 1]
    partial.mapping = {0: 3, 1: 3}
    partial.conflicts = []
    with pytest.raises(ParameterError):
        refine_attr_sparse(small_pair, partial, 2.0)


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_incremental_counters_match_recount(seed):
    params = ModelParams(n=40, m=6, q_u=0.35, rho_u=0.9, q_a=0.3, rho_a=0.8)
    pair = generate_pair(params, seed)
    partial = _truth_subset(pair, 0.6, make_rng(seed))
    refiner = GreedyRefiner(pair, partial, user_threshold=4.0, attr_threshold=3.0)
    while refiner.step() is not None:
        assert np.array_equal(refiner.counters.user_counts, recount_user_neighbors(pair, refiner.images))
    assert np.array_equal(refiner.counters.user_counts, recount_user_neighbors(pair, refiner.images))


@given(st.integers(0, 2 ** 32), st.floats(0.1, 0.9))
def test_refinement_never_edits_seeds(seed, fraction):
    params = ModelParams(n=25, m=5, q_u=0.4, rho_u=0.5, q_a=0.4, rho_a=0.5)
    pair = generate_pair(params, seed)
    rng = make_rng(seed)
    # 真の対応とは限らない任意の単射を種にする
    domain = rng.choice(25, size=int(fraction * 25), replace=False)
    targets = rng.permutation(25)[: domain.size]
    partial = PartialAlignment.from_mapping(dict(zip(domain.tolist(), targets.tolist())))
    for regime in (ATTR_SPARSE, ATTR_RICH):
        result, _ = refine(pair, partial, regime)
        mapping = result.mapping()
        assert all(mapping[i] == j for i, j in partial.mapping.items())
        assert len(set(mapping.values())) == len(mapping)
        assert result.extended == len(mapping) - len(partial.mapping)


def test_refinement_is_deterministic():
    params = ModelParams(n=50, m=4, q_u=0.3, rho_u=0.9, q_a=0.4, rho_a=0.5)
    pair = generate_pair(params, 17)
    partial = _truth_subset(pair, 0.7, make_rng(17))
    first, _ = refine(pair, partial)
    second, _ = refine(pair, partial)
    assert np.array_equal(first.images, second.images)


def test_refine_rejects_unknown_regime(small_pair):
    with pytest.raises(ParameterError):
        refine(small_pair, PartialAlignment(), "dense")


@pytest.mark.slow
def test_sparse_refinement_recovers_truth():
    params = ModelParams(n=500, m=0, q_u=0.3, rho_u=0.95, q_a=0.5, rho_a=0.5)
    gamma1 = refine_thresholds(params).gamma1
    exact = 0
    for seed in range(20):
        pair = generate_pair(params, 1000 + seed)
        partial = _truth_subset(pair, 0.9, make_rng(seed))
        result = refine_attr_sparse(pair, partial, gamma1)
        exact += int(result.complete and np.array_equal(result.images, pair.truth.images))
    assert exact >= 18


@pytest.mark.slow
def test_rich_refinement_recovers_truth_from_attributes():
    params = ModelParams(n=300, m=400, q_u=0.01, rho_u=0.5, q_a=0.3, rho_a=1.0)
    thresholds = refine_thresholds(params)
    exact = 0
    for seed in range(20):
        pair = generate_pair(params, 2000 + seed)
        partial = _truth_subset(pair, 0.9, make_rng(seed))
        result = refine_attr_rich(pair, partial, thresholds.gamma2, thresholds.gamma3)
        exact += int(result.complete and np.array_equal(result.images, pair.truth.images))
    assert exact >= 18
