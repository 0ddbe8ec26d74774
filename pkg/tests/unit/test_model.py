#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
系数模型单元测试
"""

import math
import pickle

import numpy as np
import pytest

from nsync.errors import ConfigError, DomainError, QuadratureError
from nsync.model import (CoefficientModel, ParamSpace, constant_model, integrate_intervals,
                         integrate_sigma, load_custom_model, local_correlation, periodic_model,
                         phi, sigma_matrix)


class TestParamSpace:
    def test_init_inverted_box(self):
        """测试盒约束上下界颠倒"""
        with pytest.raises(ConfigError) as exc:
            ParamSpace(["vol"], [2.0], [1.0], ["mu"], [-1.0], [1.0])
        assert exc.value.field == "model.sigma"

    def test_init_truth_on_boundary(self):
        """测试真值落在边界上"""
        with pytest.raises(ConfigError):
            ParamSpace(["vol"], [0.5], [2.0], ["mu"], [-1.0], [1.0], sigma0=[0.5], theta0=[0.0])

    def test_check_sigma_outside(self, vol_model):
        """测试 σ 超出盒约束"""
        with pytest.raises(DomainError):
            vol_model.params.check_sigma([10.0])

    def test_require_truth_missing(self):
        """测试缺少真值"""
        params = ParamSpace(["vol"], [0.5], [2.0], ["mu"], [-1.0], [1.0])
        with pytest.raises(ConfigError) as exc:
            params.require_truth()
        assert exc.value.field == "model.sigma0"


class TestSigmaMatrix:
    def test_sigma_matrix_identity(self, vol_model):
        """测试 b = Id 时 Σ = Id"""
        np.testing.assert_allclose(sigma_matrix(vol_model, 0.3, [1.0]), np.eye(2))

    def test_sigma_matrix_correlated(self, rho_model):
        """测试 b = [[1,0],[ρ,√(1−ρ²)]] 时 Σ = [[1,ρ],[ρ,1]]"""
        s = sigma_matrix(rho_model, 1.7, [0.3])
        np.testing.assert_allclose(s, [[1.0, 0.3], [0.3, 1.0]], atol=1e-15)
        assert np.linalg.det(s) > 0

    def test_sigma_matrix_negative_time(self, vol_model):
        """测试负时间"""
        with pytest.raises(DomainError):
            sigma_matrix(vol_model, -1.0, [1.0])


class TestLocalCorrelation:
    def test_local_correlation_zero(self, vol_model):
        """测试 Σ = Id 时相关系数为 0"""
        assert local_correlation(vol_model, 0.0, [1.0]) == 0.0

    def test_local_correlation_unit_variance(self, rho_model):
        """测试单位方差时返回 ρ"""
        assert local_correlation(rho_model, 2.0, [-0.4]) == pytest.approx(-0.4)

    def test_local_correlation_scaled(self):
        """测试 Σ = [[4,1],[1,1]] 时为 0.5"""
        params = ParamSpace(["rho"], [-0.6], [0.6], ["mu"], [-1.0], [1.0])
        model = constant_model(params, fixed={"vol1": 2.0, "vol2": 1.0})
        np.testing.assert_allclose(model.sigma_matrix(0.0, [0.5]), [[4.0, 1.0], [1.0, 1.0]])
        assert local_correlation(model, 0.0, [0.5]) == pytest.approx(0.5)


class TestIntegrateSigma:
    def test_integrate_sigma_constant_diagonal(self, rho_model):
        """测试常系数 Σ_11 在 (0,2] 上的积分"""
        assert integrate_sigma(rho_model, (0.0, 2.0), [0.3], "11") == pytest.approx(2.0)

    def test_integrate_sigma_constant_cross(self, rho_model):
        """测试常系数 Σ_12 在 (1,2] 上的积分"""
        assert integrate_sigma(rho_model, (1.0, 2.0), [0.3], "12") == pytest.approx(0.3)

    def test_integrate_sigma_periodic(self, periodic_sigma_model):
        """测试 Σ_11 = 2 + sin(2πt) 在 (0,1] 上的积分"""
        value = integrate_sigma(periodic_sigma_model, (0.0, 1.0), [1.0], "11")
        assert value == pytest.approx(2.0, abs=1e-12)

    def test_integrate_sigma_periodic_family(self):
        """测试周期模型族的积分 ∫(1 + ½sin)² = 1.125"""
        params = ParamSpace(["vol"], [0.5], [2.0], ["mu"], [-1.0], [1.0])
        model = periodic_model(params, period=1.0, amplitude=0.5)
        assert model.integrate_sigma((0.0, 1.0), [1.0], "22") == pytest.approx(1.125, rel=1e-12)

    def test_integrate_sigma_bad_interval(self, vol_model):
        """测试区间端点颠倒"""
        with pytest.raises(DomainError):
            integrate_sigma(vol_model, (2.0, 1.0), [1.0], "11")

    def test_integrate_sigma_bad_component(self, vol_model):
        """测试未知分量"""
        with pytest.raises(DomainError):
            integrate_sigma(vol_model, (0.0, 1.0), [1.0], "21")


class TestIncrementDrift:
    def test_increment_drift_constant(self, vol_model):
        """测试常漂移 μ ≡ (θ, θ)"""
        assert vol_model.increment_drift((0.0, 3.0), [0.5], 1) == pytest.approx(1.5)

    def test_increment_drift_zero(self, vol_model):
        """测试零漂移"""
        assert vol_model.increment_drift((0.0, 3.0), [0.0], 2) == 0.0

    def test_increment_drift_cosine(self, periodic_sigma_model):
        """测试 μ^1 = θ·cos(2πt) 在 (0, 1/4] 上的积分为 θ/(2π)"""
        value = periodic_sigma_model.increment_drift((0.0, 0.25), [1.3], 1)
        assert value == pytest.approx(1.3 / (2.0 * math.pi), rel=1e-12)

    def test_increment_drift_bad_coordinate(self, vol_model):
        """测试坐标越界"""
        with pytest.raises(DomainError):
            vol_model.increment_drift((0.0, 1.0), [0.0], 3)


class TestPhi:
    def test_phi_at_truth(self, vol_model):
        """测试 θ = θ0 时为 0"""
        assert phi(vol_model, 1.0, [0.5], 1) == 0.0

    def test_phi_unit_scale(self, vol_model):
        """测试 Σ = Id 时 φ = θ − θ0"""
        assert phi(vol_model, 1.0, [1.5], 2) == pytest.approx(1.0)

    def test_phi_scaled(self, vol_model):
        """测试 Σ_11 = 4 时 φ = (θ − θ0)/2"""
        value = phi(vol_model, 0.0, [1.5], 1, sigma0=[2.0], theta0=[0.5])
        assert value == pytest.approx(0.5)


class TestIntegrateIntervals:
    def test_integrate_intervals_polynomial(self):
        """测试多项式积分精确"""
        a = np.array([0.0, 1.0])
        b = np.array([1.0, 3.0])
        out = integrate_intervals(lambda t: t ** 3, a, b)
        np.testing.assert_allclose(out, [0.25, (81.0 - 1.0) / 4.0], rtol=1e-13)

    def test_integrate_intervals_not_converged(self):
        """测试高频振荡函数无法收敛"""
        with pytest.raises(QuadratureError) as exc:
            integrate_intervals(lambda t: np.sin(500.0 * t), np.array([0.0]), np.array([1.0]))
        assert exc.value.achieved > 1e-9


class TestDerivatives:
    def test_sigma_derivatives_scale(self, vol_model):
        """测试 ∂Σ/∂vol = 2·vol·Id"""
        d = vol_model.sigma_derivatives(np.zeros(3), np.array([1.5]))
        assert d.shape == (3, 1, 2, 2)
        np.testing.assert_allclose(d[0, 0], 3.0 * np.eye(2), atol=1e-8)

    def test_drift_derivatives_common(self, vol_model):
        """测试 ∂μ/∂mu = (1, 1)"""
        d = vol_model.drift_derivatives(np.zeros(2), np.array([0.2]))
        np.testing.assert_allclose(d[1, 0], [1.0, 1.0], atol=1e-9)


class TestAudit:
    def test_audit_success(self, rho_model):
        """测试内置模型通过审计"""
        report = rho_model.audit(n_probes=200)
        assert report["max_abs_rho"] <= rho_model.rho_max + 1e-12
        assert report["min_eigenvalue"] >= rho_model.c1

    def test_audit_violated_bound(self):
        """测试声明的椭圆性界被破坏"""
        params = ParamSpace(["vol"], [0.5], [2.0], ["mu"], [-1.0], [1.0])
        model = constant_model(params, c1=2.0, c2=10.0, rho_max=0.0)
        with pytest.raises(DomainError):
            model.audit(n_probes=50)


class TestFamilies:
    def test_constant_model_unknown_role(self):
        """测试未知参数名"""
        params = ParamSpace(["kappa"], [0.5], [2.0], ["mu"], [-1.0], [1.0])
        with pytest.raises(ConfigError):
            constant_model(params)

    def test_constant_model_picklable(self, rho_model):
        """测试模型可以在进程间传递"""
        clone = pickle.loads(pickle.dumps(rho_model))
        t = np.linspace(0.0, 1.0, 5)
        np.testing.assert_array_equal(clone.sigma_values(t, np.array([0.3])),
                                      rho_model.sigma_values(t, np.array([0.3])))

    def test_periodic_model_missing_period(self):
        """测试周期模型缺少周期"""
        params = ParamSpace(["vol"], [0.5], [2.0], ["mu"], [-1.0], [1.0])
        with pytest.raises(ConfigError):
            periodic_model(params, period=0.0)

    def test_load_custom_model_success(self):
        """测试按路径加载模型工厂"""
        params = ParamSpace(["vol"], [0.5], [2.0], ["mu"], [-1.0], [1.0])
        model = load_custom_model("nsync.model:constant_model", params, {})
        assert isinstance(model, CoefficientModel)

    def test_load_custom_model_bad_path(self):
        """测试工厂路径格式错误"""
        params = ParamSpace(["vol"], [0.5], [2.0], ["mu"], [-1.0], [1.0])
        with pytest.raises(ConfigError):
            load_custom_model("nsync.model.constant_model", params, {})
