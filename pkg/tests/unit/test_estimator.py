#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
两阶段拟似然估计单元测试
"""

import json
import math

import numpy as np
import pytest

from nsync.errors import ConfigError, ContractError
from nsync.estimator import (OptimizerConfig, QuasiLikelihood, estimate, fd_hessian, h1, h2,
                             hayashi_yoshida, maximize_h1, maximize_h2)
from nsync.gaussian import IncrementVector, drift_vector, simulate_increments
from nsync.model import ParamSpace, constant_model
from nsync.sampling import build_overlap


@pytest.fixture
def vol_data(sync_scheme, vol_model):
    return simulate_increments(sync_scheme, vol_model, [1.0], [0.5], seed=21)


@pytest.fixture
def rho_data(poisson_scheme, rho_model):
    return simulate_increments(poisson_scheme, rho_model, [0.3], [0.2], seed=22)


class TestOptimizerConfig:
    def test_init_unknown_method(self):
        """测试未知的 θ 求解方法"""
        with pytest.raises(ConfigError) as exc:
            OptimizerConfig(theta_method="newton")
        assert exc.value.field == "estimator.theta_method"

    def test_to_dict(self):
        """测试序列化"""
        assert OptimizerConfig().to_dict()["grid_resolution"] == 3


class TestH1:
    def test_h1_diagonal_formula(self, sync_scheme, vol_model, vol_data):
        """测试无交叉项时 H_n^1 的闭式"""
        vol = 1.3
        var = vol ** 2 * np.concatenate((sync_scheme.lengths(1), sync_scheme.lengths(2)))
        expected = -0.5 * np.sum(vol_data.values ** 2 / var) - 0.5 * np.sum(np.log(var))
        assert h1([vol], vol_data, sync_scheme, vol_model) == pytest.approx(expected, rel=1e-12)

    def test_h1_scheme_mismatch(self, tiny_scheme, vol_model, vol_data):
        """测试增量与方案不匹配"""
        with pytest.raises(ContractError):
            h1([1.0], vol_data, tiny_scheme, vol_model)

    def test_h2_at_truth_drift(self, tiny_scheme, vol_model):
        """测试 ΔX = ΔV(θ) 时 H_n^2(θ) = 0"""
        dx = IncrementVector(drift_vector(tiny_scheme, vol_model, [0.7]), tiny_scheme)
        assert h2([0.7], [1.0], dx, tiny_scheme, vol_model) == pytest.approx(0.0, abs=1e-15)


class TestMaximizeH1:
    def test_maximize_h1_closed_form(self, sync_scheme, vol_model, vol_data):
        """测试 vol² 的极大值点为 Σ(ΔX²/|I|)/M"""
        lengths = np.concatenate((sync_scheme.lengths(1), sync_scheme.lengths(2)))
        expected = math.sqrt(np.mean(vol_data.values ** 2 / lengths))
        result = maximize_h1(vol_data, sync_scheme, vol_model)
        assert result.estimate[0] == pytest.approx(expected, rel=1e-5)
        assert result.method == "simplex" and result.starts == 3
        assert result.boundary == [False]

    def test_maximize_h1_boundary(self, sync_scheme, vol_data):
        """测试真值在盒外时估计贴边"""
        params = ParamSpace(["vol"], [1.5], [3.0], ["mu"], [-3.0], [3.0])
        model = constant_model(params)
        result = maximize_h1(vol_data, sync_scheme, model)
        assert result.estimate[0] == pytest.approx(1.5, abs=1e-5)
        assert result.boundary == [True]


class TestMaximizeH2:
    def test_maximize_h2_noiseless(self, poisson_scheme, rho_model):
        """测试无噪声数据时 GLS 精确恢复 θ"""
        dx = IncrementVector(drift_vector(poisson_scheme, rho_model, [-1.25]), poisson_scheme)
        result = maximize_h2([0.3], dx, poisson_scheme, rho_model)
        assert result.method == "gls"
        assert result.estimate[0] == pytest.approx(-1.25, abs=1e-10)

    def test_maximize_h2_gls_matches_simplex(self, poisson_scheme, rho_model, rho_data):
        """测试 GLS 与单纯形搜索给出相同的 θ̂"""
        gls = maximize_h2([0.3], rho_data, poisson_scheme, rho_model,
                          OptimizerConfig(theta_method="gls"))
        simplex = maximize_h2([0.3], rho_data, poisson_scheme, rho_model,
                              OptimizerConfig(theta_method="simplex"))
        assert simplex.method == "simplex"
        assert gls.estimate[0] == pytest.approx(simplex.estimate[0], abs=1e-5)
        assert gls.objective >= simplex.objective - 1e-9

    def test_maximize_h2_projected(self, poisson_scheme, rho_model):
        """测试 GLS 解超出 Θ2 时投影到边界"""
        dx = IncrementVector(drift_vector(poisson_scheme, rho_model, [2.9]) * 3.0, poisson_scheme)
        result = maximize_h2([0.3], dx, poisson_scheme, rho_model)
        assert result.estimate[0] == 3.0
        assert result.boundary == [True]


class TestEstimate:
    def test_estimate_without_constants(self, sync_scheme, vol_model, vol_data):
        """测试不给方案常数时只有观测信息标准误"""
        report = estimate(vol_data, sync_scheme, vol_model)
        assert report.cov_sigma_plugin is None
        assert report.se_sigma is not None and report.se_sigma[0] > 0
        assert abs(report.sigma_hat[0] - 1.0) < 0.15

    def test_estimate_plugin_covariance(self, sync_scheme, vol_model, vol_data, sync_constants):
        """测试同步方案的代入式方差 1/(Γ1·n) 与 1/(Γ2·T_n)"""
        report = estimate(vol_data, sync_scheme, vol_model, constants=sync_constants)
        s = report.sigma_hat[0]
        assert report.cov_sigma_plugin[0, 0] == pytest.approx(s ** 2 / (4.0 * 200), rel=1e-6)
        assert report.cov_theta_plugin[0, 0] == pytest.approx(s ** 2 / (2.0 * 10.0), rel=1e-6)
        assert report.cov_sigma_observed[0, 0] == pytest.approx(report.cov_sigma_plugin[0, 0],
                                                                rel=0.05)

    def test_estimate_report_json(self, sync_scheme, vol_model, vol_data, sync_constants):
        """测试报告可以写成 JSON 且包含置信区间"""
        report = estimate(vol_data, sync_scheme, vol_model, constants=sync_constants)
        data = json.loads(json.dumps(report.to_dict()))
        assert data["sigma_names"] == ["vol"]
        assert data["M1"] == 200
        lo, hi = data["confidence_intervals"]["mu"]
        assert lo < data["theta_hat"][0] < hi


class TestObservedInformation:
    def test_fd_hessian_quadratic(self):
        """测试二次函数的差分 Hessian"""
        a = np.array([[2.0, 0.5], [0.5, 1.0]])
        hess = fd_hessian(lambda x: float(x @ a @ x), [0.3, -0.2])
        np.testing.assert_allclose(hess, 2.0 * a, atol=1e-6)

    def test_quasi_likelihood_reuses_overlap(self, poisson_scheme, rho_model, rho_data):
        """测试同一观测的多次求值共用重叠矩阵"""
        ql = QuasiLikelihood(rho_data, rho_model)
        assert ql.covariance([0.1]).overlap is ql.covariance([0.2]).overlap


class TestHayashiYoshida:
    def test_hayashi_yoshida_synchronous(self, sync_scheme, rho_model):
        """测试同步方案退化为已实现协方差 ΣΔ¹XΔ²X"""
        dx = simulate_increments(sync_scheme, rho_model, [0.3], [0.2], seed=3)
        value = hayashi_yoshida(dx, build_overlap(sync_scheme))
        assert value == pytest.approx(float(np.sum(dx.delta1 * dx.delta2)), rel=1e-12)

    def test_hayashi_yoshida_hand_example(self, tiny_scheme):
        """测试 Δ¹ 与两个 Δ² 都重叠"""
        dx = IncrementVector(np.array([2.0, 0.5, -1.5]), tiny_scheme)
        assert hayashi_yoshida(dx, build_overlap(tiny_scheme)) == pytest.approx(-2.0)

    def test_hayashi_yoshida_mismatch(self, tiny_scheme, vol_data):
        """测试维度不符"""
        with pytest.raises(ContractError):
            hayashi_yoshida(vol_data, build_overlap(tiny_scheme))
