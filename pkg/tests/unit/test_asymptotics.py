#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
渐近量单元测试
"""

import math

import numpy as np
import pytest
from scipy import integrate

from nsync.asymptotics import (AveragePolicy, LimitConstants, a_series, a_tail_bound, epsilon_n,
                               gamma1, gamma2, information_matrix, inverse_sqrt, lan_experiment,
                               time_average_report, y1, y2)
from nsync.errors import ConfigError, DomainError, IdentifiabilityError
from nsync.model import ParamSpace, constant_model
from nsync.sampling import SchemeGenerator


class TestASeries:
    def test_a_series_synchronous(self, sync_constants):
        """测试 a_p ≡ 1 时 A(ρ) = ρ²/(1−ρ²)"""
        assert a_series(0.5, sync_constants) == pytest.approx(1.0 / 3.0, rel=1e-12)

    def test_a_series_derivative(self, sync_constants):
        """测试 ∂A(ρ) = 2ρ/(1−ρ²)²"""
        assert a_series(0.5, sync_constants, 1) == pytest.approx(1.0 / 0.5625, rel=1e-12)

    def test_a_series_zero(self, sync_constants):
        """测试 A(0) = 0"""
        assert a_series(0.0, sync_constants) == 0.0

    def test_a_series_out_of_range(self, sync_constants):
        """测试 |ρ| ≥ 1"""
        with pytest.raises(DomainError):
            a_series(-1.0, sync_constants)

    def test_a_tail_bound_small(self, sync_constants):
        """测试 ρ = 0.5、p_max = 40 时尾部可忽略"""
        assert a_tail_bound(0.5, sync_constants) < 1e-20
        assert a_tail_bound(0.5, sync_constants, 1) < 1e-20


class TestLimitConstants:
    def test_init_tail_too_large(self, sync_constants):
        """测试 p_max 不足以覆盖 ρ_max"""
        with pytest.raises(ConfigError) as exc:
            LimitConstants(sync_constants, AveragePolicy.POINTWISE, rho_max=0.95)
        assert exc.value.field == "asymptotics.p_max"

    def test_init_period_missing(self, sync_constants):
        """测试周期平均缺少周期"""
        with pytest.raises(ConfigError):
            LimitConstants(sync_constants, AveragePolicy.PERIOD)

    def test_for_model_policy(self, vol_model, periodic_sigma_model, sync_constants):
        """测试按时间结构选择平均方式"""
        assert LimitConstants.for_model(vol_model, sync_constants).policy == AveragePolicy.POINTWISE
        lc = LimitConstants.for_model(periodic_sigma_model, sync_constants)
        assert lc.policy == AveragePolicy.PERIOD
        ts, ws = lc.nodes()
        assert ws.sum() == pytest.approx(1.0) and ts.max() < 1.0


class TestGamma:
    def test_gamma1_volatility(self, vol_model, sync_constants):
        """测试同步方案 b = vol·Id 时 Γ1 = 4/σ0²"""
        np.testing.assert_allclose(gamma1(vol_model, sync_constants), [[4.0]], rtol=1e-6)
        np.testing.assert_allclose(gamma1(vol_model, sync_constants, [2.0]), [[1.0]], rtol=1e-6)

    def test_gamma2_volatility(self, vol_model, sync_constants):
        """测试同步方案 b = vol·Id 时 Γ2 = 2/vol²"""
        np.testing.assert_allclose(gamma2(vol_model, sync_constants), [[2.0]], rtol=1e-9)

    def test_gamma1_correlation(self, rho_model, sync_constants):
        """测试相关系数参数的 Fisher 信息 (1+ρ²)/(1−ρ²)²"""
        rho = 0.3
        expected = (1.0 + rho ** 2) / (1.0 - rho ** 2) ** 2
        np.testing.assert_allclose(gamma1(rho_model, sync_constants), [[expected]], rtol=1e-6)

    def test_gamma2_correlation(self, rho_model, sync_constants):
        """测试公共漂移的信息 1^T Σ^{-1} 1 = 2/(1+ρ)"""
        np.testing.assert_allclose(gamma2(rho_model, sync_constants), [[2.0 / 1.3]], rtol=1e-9)

    def test_gamma2_periodic(self, periodic_sigma_model, sync_constants):
        """测试周期系数的周期平均 ∫cos²/(2+sin) = 2 − √3"""
        value = gamma2(periodic_sigma_model, sync_constants, [1.0], [0.0])
        np.testing.assert_allclose(value, [[2.0 - math.sqrt(3.0)]], rtol=1e-9)

    def test_information_matrix_block(self, vol_model, sync_constants):
        """测试 Γ = diag(Γ1, Γ2)"""
        np.testing.assert_allclose(information_matrix(vol_model, sync_constants),
                                   [[4.0, 0.0], [0.0, 2.0]], rtol=1e-6)

    def test_gamma2_single_coordinate(self, sync_constants):
        """测试只有 μ^1 依赖 θ 时 Γ2 = 1/Σ_11"""
        params = ParamSpace(["vol"], [0.5], [2.0], ["mu1"], [-1.0], [1.0],
                            sigma0=[1.0], theta0=[0.0])
        model = constant_model(params)
        np.testing.assert_allclose(gamma2(model, sync_constants, [2.0], [0.0]), [[0.25]],
                                   rtol=1e-9)

    def test_time_average_report_constant(self, vol_model, sync_constants):
        """测试常系数模型无需数值平均"""
        report = time_average_report(vol_model, sync_constants)
        assert report["gamma1"]["relative_change"] == 0.0


class TestContrastFunctions:
    def test_y1_zero_at_truth(self, rho_model, sync_constants):
        """测试 Y1(σ0) = 0"""
        assert y1([0.3], rho_model, sync_constants) == pytest.approx(0.0, abs=1e-14)

    def test_y1_negative_elsewhere(self, vol_model, sync_constants):
        """测试 Y1 在 σ0 以外为负"""
        assert y1([1.5], vol_model, sync_constants) < 0.0
        assert y1([0.7], vol_model, sync_constants) < 0.0

    def test_y1_matches_quadrature(self, rho_model, sync_constants):
        """测试 ∫A(s)/s ds 的逐项积分与数值积分一致"""
        rho, rho0 = 0.5, 0.3
        area, _ = integrate.quad(lambda s: a_series(s, sync_constants) / s, rho0, rho)
        big_a = a_series(rho, sync_constants)
        expected = -big_a + rho0 * big_a / rho + area
        assert y1([rho], rho_model, sync_constants) == pytest.approx(expected, rel=1e-9)

    def test_y2_zero_at_truth(self, vol_model, sync_constants):
        """测试 Y2(θ0) = 0"""
        assert y2([0.5], vol_model, sync_constants) == 0.0

    def test_y2_quadratic(self, vol_model, sync_constants):
        """测试 Y2(θ) = −½Γ2(θ − θ0)²"""
        assert y2([1.5], vol_model, sync_constants) == pytest.approx(-1.0, rel=1e-12)


class TestEpsilon:
    def test_epsilon_n_identity(self):
        """测试 Γ1 = Γ2 = 1、n = 100、h_n = 0.1 时 ε_n = diag(0.1, 1/√10)"""
        np.testing.assert_allclose(epsilon_n(100, 0.1, 1.0, 1.0),
                                   np.diag([0.1, 1.0 / math.sqrt(10.0)]), rtol=1e-12)

    def test_inverse_sqrt(self):
        """测试 (Γ^{-1/2})² = Γ^{-1}"""
        g = np.array([[4.0, 1.0], [1.0, 3.0]])
        r = inverse_sqrt(g)
        np.testing.assert_allclose(r @ r, np.linalg.inv(g), rtol=1e-12)

    def test_inverse_sqrt_not_pd(self):
        """测试非正定矩阵"""
        with pytest.raises(IdentifiabilityError):
            inverse_sqrt(np.array([[1.0, 2.0], [2.0, 1.0]]))


class TestLanExperiment:
    def test_lan_experiment_zero_direction(self, vol_model, sync_constants):
        """测试 u = 0 时对数似然比恒为 0"""
        summary = lan_experiment([0.0, 0.0], vol_model, SchemeGenerator(kind="equidistant"),
                                 50, 0.1, 3, sync_constants)
        assert summary["mean"] == 0.0 and summary["variance"] == 0.0
        assert summary["reference_variance"] == 0.0

    def test_lan_experiment_wrong_dimension(self, vol_model, sync_constants):
        """测试 u 的维度不符"""
        with pytest.raises(ConfigError) as exc:
            lan_experiment([1.0], vol_model, SchemeGenerator(), 50, 0.1, 3, sync_constants)
        assert exc.value.field == "lan.u"

    def test_lan_experiment_outside_box(self, vol_model, sync_constants):
        """测试扰动后的参数超出参数盒"""
        with pytest.raises(ConfigError):
            lan_experiment([0.0, 100.0], vol_model, SchemeGenerator(), 10, 0.1, 3, sync_constants)

    def test_lan_experiment_moments(self, vol_model, sync_constants):
        """测试对数似然比的均值接近 −|u|²/2"""
        summary = lan_experiment([1.0, 0.0], vol_model, SchemeGenerator(kind="equidistant"),
                                 200, 0.05, 200, sync_constants, seed=17)
        assert abs(summary["mean"] + 0.5) <= 4.0 * summary["mean_se"] + 0.05
        assert 0.6 < summary["variance"] < 1.5
        assert summary["sigma_perturbed"][0] == pytest.approx(1.0 + 1.0 / math.sqrt(800.0))
