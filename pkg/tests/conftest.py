"""
テスト共通のフィクスチャ
"""
import numpy as np
import pytest

from app.alignment.graph_model import ModelParams, generate_pair


@pytest.fixture
def small_params():
    return ModelParams(n=8, m=5, q_u=0.4, rho_u=0.7, q_a=0.3, rho_a=0.6)


@pytest.fixture
def small_pair(small_params):
    return generate_pair(small_params, seed=12345)


@pytest.fixture
def perfect_params():
    return ModelParams(n=30, m=12, q_u=0.4, rho_u=1.0, q_a=0.4, rho_a=1.0)


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(2024))
