#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
测试公共夹具
"""

import textwrap
from pathlib import Path
from typing import Callable

import numpy as np
import pytest

from nsync.model import CoefficientModel, ParamSpace, TimeStructure, constant_model
from nsync.sampling import SamplingScheme, SchemeConstants, generate_equidistant, generate_poisson


@pytest.fixture
def vol_model() -> CoefficientModel:
    """b = vol·Id，μ ≡ (mu, mu)，真值 vol=1, mu=0.5"""
    params = ParamSpace(["vol"], [0.2], [5.0], ["mu"], [-3.0], [3.0],
                        sigma0=[1.0], theta0=[0.5])
    return constant_model(params)


@pytest.fixture
def rho_model() -> CoefficientModel:
    """单位方差、相关系数 rho 为参数，μ ≡ (mu, mu)"""
    params = ParamSpace(["rho"], [-0.6], [0.6], ["mu"], [-3.0], [3.0],
                        sigma0=[0.3], theta0=[0.2])
    return constant_model(params)


@pytest.fixture
def corr_model_factory() -> Callable[[float], CoefficientModel]:
    """固定相关系数 ρ 的单位方差模型，σ 为公共波动率"""
    def build(rho: float) -> CoefficientModel:
        params = ParamSpace(["vol"], [0.5], [2.0], ["mu"], [-3.0], [3.0],
                            sigma0=[1.0], theta0=[0.0])
        return constant_model(params, fixed={"rho": rho})
    return build


@pytest.fixture
def periodic_sigma_model() -> CoefficientModel:
    """Σ_11(t) = 2 + sin(2πt)，Σ_22 = 1，Σ_12 = 0；μ^1 = θ·cos(2πt)"""
    params = ParamSpace(["s"], [0.5], [2.0], ["th"], [-3.0], [3.0],
                        sigma0=[1.0], theta0=[0.0])

    def diffusion(t: np.ndarray, sigma: np.ndarray) -> np.ndarray:
        out = np.zeros(t.shape + (2, 2))
        out[..., 0, 0] = sigma[0] * np.sqrt(2.0 + np.sin(2.0 * np.pi * t))
        out[..., 1, 1] = 1.0
        return out

    def drift(t: np.ndarray, theta: np.ndarray) -> np.ndarray:
        out = np.zeros(t.shape + (2,))
        out[..., 0] = theta[0] * np.cos(2.0 * np.pi * t)
        return out

    return CoefficientModel(params, drift, diffusion, structure=TimeStructure.PERIODIC,
                            period=1.0, drift_linear=True, c1=0.25, c2=12.0, rho_max=0.0)


@pytest.fixture
def tiny_scheme() -> SamplingScheme:
    """grid1 = {0, 2}，grid2 = {0, 1, 2}"""
    return SamplingScheme(np.array([0.0, 2.0]), np.array([0.0, 1.0, 2.0]), n=2, h_n=1.0)


@pytest.fixture
def sync_scheme() -> SamplingScheme:
    return generate_equidistant(200, 0.05)


@pytest.fixture
def poisson_scheme() -> SamplingScheme:
    return generate_poisson(1.0, 1.0, 200, 0.1, seed=7)


@pytest.fixture
def sync_constants() -> SchemeConstants:
    return SchemeConstants.synchronous(40)


@pytest.fixture
def write_config(tmp_path: Path) -> Callable[[str], Path]:
    """把 TOML 文本写入临时目录并返回路径"""
    def write(text: str, name: str = "experiment.toml") -> Path:
        path = tmp_path / name
        path.write_text(textwrap.dedent(text), encoding="utf-8")
        return path
    return write
