#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
渐近量
由模型的时间平均与方案常数计算 A(ρ)、Γ1、Γ2、Y1、Y2、ε_n，
并运行基于精确高斯似然比的 LAN 实验

作者: NSync Team
创建时间: 2026-10-19
版本: 1.0.0
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable, Dict, Optional, Tuple

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import linalg

from .errors import ConfigError, DomainError, IdentifiabilityError
from .model import CoefficientModel, TimeStructure
from .sampling import SchemeConstants, SchemeGenerator, SeedLike, as_seed_sequence

logger = logging.getLogger(__name__)

# 数值平均的默认时间范围与每单位时间的求积段数
DEFAULT_T_AVG = 100.0
PANELS_PER_UNIT = 4
PERIOD_PANELS = 32
TAIL_LIMIT = 1e-10

_NODES, _WEIGHTS = leggauss(10)


class AveragePolicy(Enum):
    """时间平均方式"""
    POINTWISE = "pointwise"
    PERIOD = "period"
    NUMERIC = "numeric"


def _composite_nodes(t_end: float, panels: int) -> Tuple[np.ndarray, np.ndarray]:
    """[0, t_end] 上的复合 Gauss-Legendre 节点，权重已除以 t_end"""
    edges = np.linspace(0.0, t_end, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    ts = (mid[:, None] + half[:, None] * _NODES[None, :]).ravel()
    ws = (half[:, None] * _WEIGHTS[None, :]).ravel() / t_end
    return ts, ws


@dataclass
class LimitConstants:
    """
    方案常数加上时间平均策略

    Attributes:
        scheme: 方案常数
        policy: 平均策略
        t_avg: 数值平均的时间范围
        period: 周期（PERIOD 策略）
        rho_max: 模型声明的相关系数上界
    """
    scheme: SchemeConstants
    policy: AveragePolicy
    t_avg: float = DEFAULT_T_AVG
    period: Optional[float] = None
    rho_max: float = 0.0

    def __post_init__(self) -> None:
        if self.policy == AveragePolicy.PERIOD and not self.period:
            raise ConfigError("周期平均需要周期", field="model.period")
        if self.t_avg <= 0:
            raise ConfigError("t_avg 必须为正", field="asymptotics.t_avg")
        bound = self.tail_bound
        if bound > TAIL_LIMIT:
            raise ConfigError(f"p_max={self.p_max} 在 ρ_max={self.rho_max} 处的截断误差 "
                              f"{bound:.2e} 超过 {TAIL_LIMIT:.0e}", field="asymptotics.p_max")

    @classmethod
    def for_model(cls, model: CoefficientModel, constants: SchemeConstants,
                  t_avg: float = DEFAULT_T_AVG) -> "LimitConstants":
        if model.structure == TimeStructure.CONSTANT:
            policy = AveragePolicy.POINTWISE
        elif model.structure == TimeStructure.PERIODIC:
            policy = AveragePolicy.PERIOD
        else:
            policy = AveragePolicy.NUMERIC
        return cls(scheme=constants, policy=policy, t_avg=t_avg,
                   period=model.period, rho_max=model.rho_max)

    @property
    def p_max(self) -> int:
        return self.scheme.p_max

    @property
    def tail_bound(self) -> float:
        """A、∂A 以及 f 级数在 ρ_max 处的最大截断误差上界"""
        rho = self.rho_max
        bounds = [a_tail_bound(rho, self.scheme, 0), a_tail_bound(rho, self.scheme, 1)]
        x = rho * rho
        f0 = max(self.scheme.f11[0], self.scheme.f22[0], abs(self.scheme.f12[0]))
        bounds.append(f0 * x ** (self.p_max + 1) / (1.0 - x))
        return max(bounds)

    def nodes(self, horizon: Optional[float] = None) -> Tuple[np.ndarray, np.ndarray]:
        """平均所用的 (时间节点, 权重)，权重和为 1"""
        if self.policy == AveragePolicy.POINTWISE:
            return np.zeros(1), np.ones(1)
        if self.policy == AveragePolicy.PERIOD:
            assert self.period is not None
            return _composite_nodes(self.period, PERIOD_PANELS)
        t_end = self.t_avg if horizon is None else horizon
        return _composite_nodes(t_end, max(1, int(math.ceil(PANELS_PER_UNIT * t_end))))

    def average(self, integrand: Callable[[np.ndarray], np.ndarray],
                horizon: Optional[float] = None) -> np.ndarray:
        ts, ws = self.nodes(horizon)
        return np.tensordot(ws, integrand(ts), axes=(0, 0))

    def stability_report(self, integrand: Callable[[np.ndarray], np.ndarray]) -> Dict[str, float]:
        """比较 [0, T/2] 与 [0, T] 上的平均，仅对数值平均有意义"""
        if self.policy != AveragePolicy.NUMERIC:
            return {"policy": self.policy.value, "relative_change": 0.0}
        full = np.atleast_1d(self.average(integrand))
        half = np.atleast_1d(self.average(integrand, horizon=0.5 * self.t_avg))
        scale = max(float(np.abs(full).max()), 1e-300)
        change = float(np.abs(full - half).max()) / scale
        return {"policy": self.policy.value, "t_avg": self.t_avg, "relative_change": change}


def _as_scheme_constants(constants: Any) -> SchemeConstants:
    return constants.scheme if isinstance(constants, LimitConstants) else constants


# ----------------------------------------------------------------------
# A(ρ) 级数
# ----------------------------------------------------------------------
def a_tail_bound(rho: float, constants: Any, derivative_order: int = 0) -> float:
    """利用 a_p ≤ a_1 的几何尾部上界"""
    sc = _as_scheme_constants(constants)
    a1 = float(sc.a[0])
    x = rho * rho
    q = sc.p_max + 1
    if derivative_order == 0:
        return a1 * x ** q / (1.0 - x)
    return 2.0 * a1 * abs(rho) ** (2 * q - 1) * (q - (q - 1) * x) / (1.0 - x) ** 2


def a_series(rho: float, constants: Any, derivative_order: int = 0) -> float:
    """
    截断级数 A(ρ) = Σ_{p≤p_max} a_p ρ^{2p} 或其导数

    Raises:
        DomainError: |ρ| ≥ 1 或导数阶数不受支持
    """
    if abs(rho) >= 1.0:
        raise DomainError(f"|ρ| 必须小于 1: {rho}")
    if derivative_order not in (0, 1):
        raise DomainError(f"导数阶数只能为 0 或 1: {derivative_order}")
    terms = _series_terms(np.array([rho]), _as_scheme_constants(constants))
    return float(terms["A"][0] if derivative_order == 0 else terms["dA"][0])


def _series_terms(rho: np.ndarray, sc: SchemeConstants) -> Dict[str, np.ndarray]:
    """
    在一组 ρ 上同时求 A、A/ρ、∂A 与 Σ(2p−1)a_p ρ^{2p−2}

    后两者在 ρ = 0 处也以级数形式给出有限值。
    """
    p = np.arange(1, sc.p_max + 1)
    a = sc.a
    x = rho * rho
    pow_lower = x[:, None] ** (p - 1)[None, :]
    a_over_rho = rho * (pow_lower @ a)
    return {
        "A": x * (pow_lower @ a),
        "A_over_rho": a_over_rho,
        "dA": 2.0 * rho * (pow_lower @ (p * a)),
        "C": pow_lower @ ((2 * p - 1) * a),
    }


def _f_series(rho: np.ndarray, sc: SchemeConstants) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Σ_p f_p ρ^{2p}，对 11、12、22 三个分量"""
    p = np.arange(sc.p_max + 1)
    powers = (rho * rho)[:, None] ** p[None, :]
    return powers @ sc.f11, powers @ sc.f12, powers @ sc.f22


# ----------------------------------------------------------------------
# Γ1, Γ2
# ----------------------------------------------------------------------
def _check_pd(matrix: np.ndarray, label: str) -> np.ndarray:
    matrix = 0.5 * (matrix + matrix.T)
    eig = np.linalg.eigvalsh(matrix)
    if eig[0] <= 0:
        raise IdentifiabilityError(f"{label} 不是正定矩阵", eigenvalue=float(eig[0]))
    return matrix


def _limit_constants(model: CoefficientModel, constants: Any) -> LimitConstants:
    if isinstance(constants, LimitConstants):
        return constants
    return LimitConstants.for_model(model, constants)


def _gamma1_integrand(model: CoefficientModel, sc: SchemeConstants,
                      sigma0: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
    def integrand(ts: np.ndarray) -> np.ndarray:
        s0 = model.sigma_values(ts, sigma0)
        ds = model.sigma_derivatives(ts, sigma0)
        s11, s22, s12 = s0[:, 0, 0], s0[:, 1, 1], s0[:, 0, 1]
        rho0 = s12 / np.sqrt(s11 * s22)
        beta1 = -0.5 * ds[:, :, 0, 0] / s11[:, None]
        beta2 = -0.5 * ds[:, :, 1, 1] / s22[:, None]
        r = ds[:, :, 0, 1] / np.sqrt(s11 * s22)[:, None] + rho0[:, None] * (beta1 + beta2)
        terms = _series_terms(rho0, sc)
        big_a, a_rho, c = terms["A"], terms["A_over_rho"], terms["C"]
        bsum = beta1 + beta2

        def outer(u: np.ndarray, v: np.ndarray) -> np.ndarray:
            return np.einsum("ti,tj->tij", u, v)

        w = lambda coef: coef[:, None, None]  # noqa: E731
        return (w(big_a + 2.0 * sc.a0[0]) * outer(beta1, beta1)
                + w(big_a + 2.0 * sc.a0[1]) * outer(beta2, beta2)
                - w(big_a) * (outer(beta1, beta2) + outer(beta2, beta1))
                + w(a_rho) * (outer(r, bsum) + outer(bsum, r))
                + w(c) * outer(r, r))
    return integrand


def gamma1(model: CoefficientModel, constants: Any, sigma0: Optional[Any] = None) -> np.ndarray:
    """
    σ 的渐近信息矩阵 Γ1 = −∂²Y1(σ0)

    B_l 取标准差比 ([Σ(σ0)]_ll/[Σ(σ)]_ll)^{1/2}，结果取正定方向。

    Raises:
        IdentifiabilityError: Γ1 非正定
    """
    lc = _limit_constants(model, constants)
    sigma0 = model.params.sigma0 if sigma0 is None else np.asarray(sigma0, dtype=float)
    if sigma0 is None:
        raise ConfigError("缺少真值 σ0", field="model.sigma0")
    value = lc.average(_gamma1_integrand(model, lc.scheme, sigma0))
    return _check_pd(np.atleast_2d(value), "Γ1")


def _gamma2_integrand(model: CoefficientModel, sc: SchemeConstants, sigma0: np.ndarray,
                      theta0: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
    def integrand(ts: np.ndarray) -> np.ndarray:
        s0 = model.sigma_values(ts, sigma0)
        s11, s22 = s0[:, 0, 0], s0[:, 1, 1]
        rho0 = s0[:, 0, 1] / np.sqrt(s11 * s22)
        dmu = model.drift_derivatives(ts, theta0)
        g1 = dmu[:, :, 0] / np.sqrt(s11)[:, None]
        g2 = dmu[:, :, 1] / np.sqrt(s22)[:, None]
        c11, c12, c22 = _f_series(rho0, sc)
        cross = np.einsum("ti,tj->tij", g1, g2)
        return (c11[:, None, None] * np.einsum("ti,tj->tij", g1, g1)
                + c22[:, None, None] * np.einsum("ti,tj->tij", g2, g2)
                - (rho0 * c12)[:, None, None] * (cross + np.swapaxes(cross, 1, 2)))
    return integrand


def gamma2(model: CoefficientModel, constants: Any, sigma0: Optional[Any] = None,
           theta0: Optional[Any] = None) -> np.ndarray:
    """θ 的渐近信息矩阵 Γ2"""
    lc = _limit_constants(model, constants)
    if sigma0 is None or theta0 is None:
        sigma0, theta0 = model.params.require_truth()
    sigma0 = np.asarray(sigma0, dtype=float)
    theta0 = np.asarray(theta0, dtype=float)
    value = lc.average(_gamma2_integrand(model, lc.scheme, sigma0, theta0))
    return _check_pd(np.atleast_2d(value), "Γ2")


def information_matrix(model: CoefficientModel, constants: Any, sigma0: Optional[Any] = None,
                       theta0: Optional[Any] = None) -> np.ndarray:
    """Γ = diag(Γ1, Γ2)"""
    return linalg.block_diag(gamma1(model, constants, sigma0),
                             gamma2(model, constants, sigma0, theta0))


def time_average_report(model: CoefficientModel, constants: Any,
                        sigma0: Optional[Any] = None,
                        theta0: Optional[Any] = None) -> Dict[str, Any]:
    """Γ1 与 Γ2 的时间平均稳定性报告"""
    lc = _limit_constants(model, constants)
    if sigma0 is None or theta0 is None:
        sigma0, theta0 = model.params.require_truth()
    sigma0 = np.asarray(sigma0, dtype=float)
    theta0 = np.asarray(theta0, dtype=float)
    return {
        "gamma1": lc.stability_report(_gamma1_integrand(model, lc.scheme, sigma0)),
        "gamma2": lc.stability_report(_gamma2_integrand(model, lc.scheme, sigma0, theta0)),
    }


# ----------------------------------------------------------------------
# Y1, Y2
# ----------------------------------------------------------------------
def y1(sigma: Any, model: CoefficientModel, constants: Any,
       sigma0: Optional[Any] = None) -> float:
    """
    σ 阶段的极限对比函数 Y1(σ)，在 σ0 处为 0，其余处 ≤ 0

    ∫_{ρ0}^{ρ} A(s)/s ds 对截断级数逐项精确积分。
    """
    sigma = model.params.check_sigma(sigma)
    lc = _limit_constants(model, constants)
    sc = lc.scheme
    sigma0 = model.params.sigma0 if sigma0 is None else np.asarray(sigma0, dtype=float)
    if sigma0 is None:
        raise ConfigError("缺少真值 σ0", field="model.sigma0")
    p = np.arange(1, sc.p_max + 1)

    def integrand(ts: np.ndarray) -> np.ndarray:
        s0 = model.sigma_values(ts, sigma0)
        s = model.sigma_values(ts, sigma)
        b1 = np.sqrt(s0[:, 0, 0] / s[:, 0, 0])
        b2 = np.sqrt(s0[:, 1, 1] / s[:, 1, 1])
        rho0 = s0[:, 0, 1] / np.sqrt(s0[:, 0, 0] * s0[:, 1, 1])
        rho = s[:, 0, 1] / np.sqrt(s[:, 0, 0] * s[:, 1, 1])
        terms = _series_terms(rho, sc)
        log_part = ((rho * rho)[:, None] ** p[None, :]
                    - (rho0 * rho0)[:, None] ** p[None, :]) @ (sc.a / (2.0 * p))
        return (-0.5 * terms["A"] * (b1 ** 2 + b2 ** 2)
                + b1 * b2 * rho0 * terms["A_over_rho"]
                + sc.a0[0] * (0.5 - 0.5 * b1 ** 2 + np.log(b1))
                + sc.a0[1] * (0.5 - 0.5 * b2 ** 2 + np.log(b2))
                + log_part)

    return float(lc.average(integrand))


def y2(theta: Any, model: CoefficientModel, constants: Any, sigma0: Optional[Any] = None,
       theta0: Optional[Any] = None) -> float:
    """θ 阶段的极限对比函数 Y2(θ)"""
    theta = model.params.check_theta(theta)
    lc = _limit_constants(model, constants)
    if sigma0 is None or theta0 is None:
        sigma0, theta0 = model.params.require_truth()
    sigma0 = np.asarray(sigma0, dtype=float)
    theta0 = np.asarray(theta0, dtype=float)

    def integrand(ts: np.ndarray) -> np.ndarray:
        s0 = model.sigma_values(ts, sigma0)
        rho0 = s0[:, 0, 1] / np.sqrt(s0[:, 0, 0] * s0[:, 1, 1])
        ph = model.phi_values(ts, theta, sigma0, theta0)
        c11, c12, c22 = _f_series(rho0, lc.scheme)
        return (-0.5 * (c11 * ph[:, 0] ** 2 + c22 * ph[:, 1] ** 2)
                + rho0 * c12 * ph[:, 0] * ph[:, 1])

    return float(lc.average(integrand))


# ----------------------------------------------------------------------
# ε_n 与 LAN 实验
# ----------------------------------------------------------------------
def inverse_sqrt(matrix: np.ndarray, label: str = "Γ") -> np.ndarray:
    """对称正定矩阵的 −1/2 次幂（特征分解）"""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    matrix = 0.5 * (matrix + matrix.T)
    eig, vec = np.linalg.eigh(matrix)
    if eig[0] <= 0:
        raise IdentifiabilityError(f"{label} 不是正定矩阵", eigenvalue=float(eig[0]))
    return (vec / np.sqrt(eig)) @ vec.T


def sqrt_psd(matrix: np.ndarray) -> np.ndarray:
    """对称半正定矩阵的 1/2 次幂"""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    eig, vec = np.linalg.eigh(0.5 * (matrix + matrix.T))
    return (vec * np.sqrt(np.clip(eig, 0.0, None))) @ vec.T


def epsilon_n(n: int, h_n: float, gamma1_matrix: Any, gamma2_matrix: Any) -> np.ndarray:
    """ε_n = diag(n^{-1/2}Γ1^{-1/2}, T_n^{-1/2}Γ2^{-1/2})"""
    t_n = n * h_n
    return linalg.block_diag(inverse_sqrt(gamma1_matrix, "Γ1") / math.sqrt(n),
                             inverse_sqrt(gamma2_matrix, "Γ2") / math.sqrt(t_n))


def _lan_replication(task: Tuple[CoefficientModel, SchemeGenerator, int, float,
                                 np.ndarray, np.ndarray, np.ndarray, np.ndarray,
                                 np.random.SeedSequence]) -> float:
    """单次重复：在 α0 下模拟，返回精确对数似然比"""
    from .gaussian import assemble, drift_vector, log_density, simulate_increments
    model, generator, n, h_n, sigma0, theta0, sigma1, theta1, ss = task
    scheme_ss, noise_ss = ss.spawn(2)
    scheme = generator.draw(n, h_n, scheme_ss)
    op0 = assemble(scheme, None, model, sigma0)
    dx = simulate_increments(scheme, model, sigma0, theta0, noise_ss, op=op0)
    op1 = assemble(scheme, op0.overlap, model, sigma1, layout=op0.layout)
    return (log_density(op1, dx.values, drift_vector(scheme, model, theta1))
            - log_density(op0, dx.values, drift_vector(scheme, model, theta0)))


def lan_experiment(u: Any, model: CoefficientModel, generator: SchemeGenerator, n: int,
                   h_n: float, replications: int, constants: Any, seed: SeedLike = 0,
                   workers: int = 1, show_progress: bool = False) -> Dict[str, Any]:
    """
    局部渐近正态性实验

    每次重复在 α0 下模拟 ΔX，计算 log p(ΔX; α0 + ε_n u) − log p(ΔX; α0)。
    样本均值的参考值为 −|u|²/2，样本方差的参考值为 |u|²。

    Raises:
        ConfigError: 扰动后的参数超出参数盒
    """
    from .montecarlo import run_replications

    sigma0, theta0 = model.params.require_truth()
    u = np.atleast_1d(np.asarray(u, dtype=float))
    d1, d2 = model.params.d1, model.params.d2
    if u.size != d1 + d2:
        raise ConfigError(f"u 的维度应为 {d1 + d2}", field="lan.u")
    g1 = gamma1(model, constants, sigma0)
    g2 = gamma2(model, constants, sigma0, theta0)
    shift = epsilon_n(n, h_n, g1, g2) @ u
    sigma1, theta1 = sigma0 + shift[:d1], theta0 + shift[d1:]
    try:
        model.params.check_sigma(sigma1)
        model.params.check_theta(theta1)
    except DomainError as e:
        raise ConfigError(f"扰动后的参数超出参数盒: {e}", field="lan.u")

    norm2 = float(u @ u)
    if norm2 == 0.0:
        values = np.zeros(replications)
    else:
        base = as_seed_sequence(seed)
        tasks = [(model, generator, n, h_n, sigma0, theta0, sigma1, theta1, child)
                 for child in base.spawn(replications)]
        logger.info(f"开始 LAN 实验: n={n}, h_n={h_n}, R={replications}, |u|={math.sqrt(norm2):.4f}")
        values = np.asarray(run_replications(_lan_replication, tasks, workers=workers,
                                             show_progress=show_progress, desc="LAN"))

    mean = float(values.mean())
    var = float(values.var(ddof=1)) if replications > 1 else float("nan")
    se = math.sqrt(var / replications) if replications > 1 else float("nan")
    summary = {
        "n": n,
        "h_n": h_n,
        "replications": replications,
        "u": u.tolist(),
        "mean": mean,
        "variance": var,
        "mean_se": se,
        "reference_mean": -0.5 * norm2,
        "reference_variance": norm2,
        "sigma_perturbed": sigma1.tolist(),
        "theta_perturbed": theta1.tolist(),
        "gamma1": g1.tolist(),
        "gamma2": g2.tolist(),
    }
    logger.info(f"LAN 实验完成: 均值={mean:.4f} (参考 {-0.5 * norm2:.4f}), "
                f"方差={var:.4f} (参考 {norm2:.4f})")
    return summary
