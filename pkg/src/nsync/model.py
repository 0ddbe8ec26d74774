#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
系数模型
描述二维扩散过程的确定性漂移 μ_t(θ) 与扩散系数 b_t(σ)，
并提供 Σ_t、局部相关系数、区间积分、漂移增量与 φ 等派生量

作者: NSync Team
创建时间: 2026-10-19
版本: 1.0.0
"""

import importlib
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable, Dict, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial.legendre import leggauss

from .errors import ConfigError, DomainError, NumericalError, QuadratureError

logger = logging.getLogger(__name__)

# 每个观测区间上的 Gauss-Legendre 阶数
GL_ORDER = 10
_GL_NODES, _GL_WEIGHTS = leggauss(GL_ORDER)

# 二分前后两次估计的相对容差；细化后仍超过 QUAD_FAIL_TOL 视为不收敛
QUAD_REFINE_TOL = 1e-12
QUAD_FAIL_TOL = 1e-9

COMPONENTS = {"11": (0, 0), "22": (1, 1), "12": (0, 1)}

DriftFn = Callable[[np.ndarray, np.ndarray], np.ndarray]
DiffusionFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


class TimeStructure(Enum):
    """系数的时间结构"""
    CONSTANT = "constant"
    PERIODIC = "periodic"
    GENERAL = "general"


def fd_step(x: np.ndarray) -> np.ndarray:
    """中心差分步长 1e-5·(1+|x|)"""
    return 1e-5 * (1.0 + np.abs(np.asarray(x, dtype=float)))


@dataclass
class ParamSpace:
    """
    参数空间 Θ1 × Θ2

    Attributes:
        sigma_names / theta_names: 参数名
        sigma_lower, sigma_upper: Θ1 的盒约束
        theta_lower, theta_upper: Θ2 的盒约束
        sigma0, theta0: 模拟研究用的真值（可选）
    """
    sigma_names: Tuple[str, ...]
    sigma_lower: np.ndarray
    sigma_upper: np.ndarray
    theta_names: Tuple[str, ...]
    theta_lower: np.ndarray
    theta_upper: np.ndarray
    sigma0: Optional[np.ndarray] = None
    theta0: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        self.sigma_names = tuple(self.sigma_names)
        self.theta_names = tuple(self.theta_names)
        self.sigma_lower = np.atleast_1d(np.asarray(self.sigma_lower, dtype=float))
        self.sigma_upper = np.atleast_1d(np.asarray(self.sigma_upper, dtype=float))
        self.theta_lower = np.atleast_1d(np.asarray(self.theta_lower, dtype=float))
        self.theta_upper = np.atleast_1d(np.asarray(self.theta_upper, dtype=float))

        for label, names, lo, hi in (
            ("sigma", self.sigma_names, self.sigma_lower, self.sigma_upper),
            ("theta", self.theta_names, self.theta_lower, self.theta_upper),
        ):
            if not (len(names) == lo.size == hi.size):
                raise ConfigError("参数名与盒约束维度不一致", field=f"model.{label}")
            if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
                raise ConfigError("盒约束必须有限", field=f"model.{label}")
            if np.any(lo >= hi):
                raise ConfigError("盒约束必须满足 lower < upper", field=f"model.{label}")

        if self.sigma0 is not None:
            self.sigma0 = np.atleast_1d(np.asarray(self.sigma0, dtype=float))
            if self.sigma0.size != self.d1 or not self._strictly_inside(
                    self.sigma0, self.sigma_lower, self.sigma_upper):
                raise ConfigError("σ0 必须严格位于 Θ1 内部", field="model.sigma0")
        if self.theta0 is not None:
            self.theta0 = np.atleast_1d(np.asarray(self.theta0, dtype=float))
            if self.theta0.size != self.d2 or not self._strictly_inside(
                    self.theta0, self.theta_lower, self.theta_upper):
                raise ConfigError("θ0 必须严格位于 Θ2 内部", field="model.theta0")

    @staticmethod
    def _strictly_inside(x: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> bool:
        return bool(np.all(x > lo) and np.all(x < hi))

    @property
    def d1(self) -> int:
        return len(self.sigma_names)

    @property
    def d2(self) -> int:
        return len(self.theta_names)

    @property
    def has_truth(self) -> bool:
        return self.sigma0 is not None and self.theta0 is not None

    @property
    def sigma_bounds(self) -> Sequence[Tuple[float, float]]:
        return list(zip(self.sigma_lower, self.sigma_upper))

    @property
    def theta_bounds(self) -> Sequence[Tuple[float, float]]:
        return list(zip(self.theta_lower, self.theta_upper))

    def check_sigma(self, sigma: Any) -> np.ndarray:
        """检查 σ 属于 clos(Θ1)"""
        sigma = np.atleast_1d(np.asarray(sigma, dtype=float))
        if sigma.size != self.d1:
            raise DomainError(f"σ 维度应为 {self.d1}，实际为 {sigma.size}")
        if np.any(sigma < self.sigma_lower) or np.any(sigma > self.sigma_upper):
            raise DomainError(f"σ={sigma.tolist()} 超出 Θ1 盒约束")
        return sigma

    def check_theta(self, theta: Any) -> np.ndarray:
        """检查 θ 属于 clos(Θ2)"""
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        if theta.size != self.d2:
            raise DomainError(f"θ 维度应为 {self.d2}，实际为 {theta.size}")
        if np.any(theta < self.theta_lower) or np.any(theta > self.theta_upper):
            raise DomainError(f"θ={theta.tolist()} 超出 Θ2 盒约束")
        return theta

    def require_truth(self) -> Tuple[np.ndarray, np.ndarray]:
        if not self.has_truth:
            raise ConfigError("缺少真值 σ0/θ0", field="model.sigma0")
        return self.sigma0, self.theta0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "sigma_names": list(self.sigma_names),
            "sigma_lower": self.sigma_lower.tolist(),
            "sigma_upper": self.sigma_upper.tolist(),
            "theta_names": list(self.theta_names),
            "theta_lower": self.theta_lower.tolist(),
            "theta_upper": self.theta_upper.tolist(),
            "sigma0": None if self.sigma0 is None else self.sigma0.tolist(),
            "theta0": None if self.theta0 is None else self.theta0.tolist(),
        }


def _gauss_legendre(fn: Callable[[np.ndarray], np.ndarray],
                    a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """对每个区间 (a_k, b_k] 做 10 阶 Gauss-Legendre，返回积分及 |f| 的积分"""
    half = 0.5 * (b - a)
    mid = 0.5 * (a + b)
    t = mid[:, None] + half[:, None] * _GL_NODES[None, :]
    vals = np.asarray(fn(t), dtype=float)
    extra = (None,) * (vals.ndim - 2)
    scale = half[(slice(None),) + extra]
    total = np.einsum("k,mk...->m...", _GL_WEIGHTS, vals) * scale
    total_abs = np.einsum("k,mk...->m...", _GL_WEIGHTS, np.abs(vals)) * scale
    return total, total_abs


def integrate_intervals(fn: Callable[[np.ndarray], np.ndarray],
                        a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """
    在一组区间上积分向量化函数 fn

    先用整区间与二分后两半各做一次 Gauss-Legendre，二者相对差超过 1e-12 时
    再细化一次；细化后仍不一致则抛出 QuadratureError。

    Args:
        fn: 接受形如 (m, k) 的时间数组，返回 (m, k, ...) 的函数值
        a, b: 区间左右端点

    Returns:
        形如 (m, ...) 的积分值
    """
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    if a.size == 0:
        probe = np.asarray(fn(np.zeros((1, GL_ORDER))))
        return np.zeros((0,) + probe.shape[2:])

    whole, _ = _gauss_legendre(fn, a, b)
    mid = 0.5 * (a + b)
    left, left_abs = _gauss_legendre(fn, a, mid)
    right, right_abs = _gauss_legendre(fn, mid, b)
    halves = left + right
    scale = np.maximum(left_abs + right_abs, np.finfo(float).tiny)

    bad = np.abs(whole - halves) > QUAD_REFINE_TOL * scale
    if not np.any(bad):
        return halves

    # 仅对不一致的区间再二分一次
    idx = np.nonzero(bad.reshape(bad.shape[0], -1).any(axis=1))[0]
    aa, bb, mm = a[idx], b[idx], mid[idx]
    q1 = 0.5 * (aa + mm)
    q3 = 0.5 * (mm + bb)
    quarters = (_gauss_legendre(fn, aa, q1)[0] + _gauss_legendre(fn, q1, mm)[0]
                + _gauss_legendre(fn, mm, q3)[0] + _gauss_legendre(fn, q3, bb)[0])
    achieved = np.abs(quarters - halves[idx]) / scale[idx]
    worst = float(np.max(achieved))
    if worst > QUAD_FAIL_TOL:
        raise QuadratureError("区间积分细化后仍未收敛", achieved=worst)
    result = halves.copy()
    result[idx] = quarters
    return result


class CoefficientModel:
    """
    确定性系数模型

    drift_fn(t, θ) 返回形如 t.shape + (2,) 的漂移，
    diffusion_fn(t, σ) 返回形如 t.shape + (2, 2) 的扩散矩阵 b_t(σ)。
    两个函数都需要对 t 向量化。构造后不可变，可在并行进程间共享。
    """

    def __init__(self,
                 params: ParamSpace,
                 drift_fn: DriftFn,
                 diffusion_fn: DiffusionFn,
                 structure: TimeStructure = TimeStructure.GENERAL,
                 period: Optional[float] = None,
                 drift_linear: bool = False,
                 c1: float = 1e-8,
                 c2: float = 1e8,
                 rho_max: float = 0.99,
                 name: str = "custom",
                 sigma_jacobian: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None):
        """
        初始化系数模型

        Args:
            params: 参数空间
            drift_fn: 漂移函数
            diffusion_fn: 扩散系数函数
            structure: 时间结构标签
            period: 周期（structure 为 PERIODIC 时必需）
            drift_linear: 漂移是否关于 θ 线性（仿射）
            c1, c2: 椭圆性界 c1·Id ≤ Σ_t ≤ c2·Id
            rho_max: 局部相关系数上界，取值 [0, 1)
            name: 模型族名称
            sigma_jacobian: 可选的解析导数 ∂_σ Σ_t(σ)，形如 t.shape + (d1, 2, 2)

        Raises:
            ConfigError: 声明的常数不合法
        """
        if not (0 < c1 <= c2):
            raise ConfigError("椭圆性界须满足 0 < c1 ≤ c2", field="model.c1")
        if not (0.0 <= rho_max < 1.0):
            raise ConfigError("rho_max 须位于 [0, 1)", field="model.rho_max")
        if structure == TimeStructure.PERIODIC and (period is None or period <= 0):
            raise ConfigError("周期模型必须给出正的周期", field="model.period")

        self.params = params
        self._drift_fn = drift_fn
        self._diffusion_fn = diffusion_fn
        self.structure = structure
        self.period = period
        self.drift_linear = drift_linear
        self.c1 = float(c1)
        self.c2 = float(c2)
        self.rho_max = float(rho_max)
        self.name = name
        self.sigma_jacobian = sigma_jacobian

    # ------------------------------------------------------------------
    # 向量化的内部求值（不做盒约束检查）
    # ------------------------------------------------------------------
    def diffusion_values(self, t: Any, sigma: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return np.asarray(self._diffusion_fn(t, np.asarray(sigma, dtype=float)), dtype=float)

    def sigma_values(self, t: Any, sigma: np.ndarray) -> np.ndarray:
        """Σ_t(σ) = b_t b_t^T，形如 t.shape + (2, 2)"""
        b = self.diffusion_values(t, sigma)
        return np.einsum("...ij,...kj->...ik", b, b)

    def drift_values(self, t: Any, theta: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return np.asarray(self._drift_fn(t, np.asarray(theta, dtype=float)), dtype=float)

    def correlation_values(self, t: Any, sigma: np.ndarray) -> np.ndarray:
        s = self.sigma_values(t, sigma)
        d1, d2 = s[..., 0, 0], s[..., 1, 1]
        if np.any(d1 <= 0) or np.any(d2 <= 0):
            raise NumericalError(f"模型 {self.name} 的 Σ_t 出现非正对角元")
        return s[..., 0, 1] / np.sqrt(d1 * d2)

    def sigma_integrals(self, a: np.ndarray, b: np.ndarray, sigma: np.ndarray) -> np.ndarray:
        """每个区间上 ∫Σ_t dt，形如 (m, 2, 2)"""
        a = np.atleast_1d(np.asarray(a, dtype=float))
        b = np.atleast_1d(np.asarray(b, dtype=float))
        if self.structure == TimeStructure.CONSTANT:
            s0 = self.sigma_values(np.zeros(1), sigma)[0]
            return (b - a)[:, None, None] * s0[None, :, :]
        return integrate_intervals(lambda t: self.sigma_values(t, sigma), a, b)

    def sigma_component_integrals(self, a: np.ndarray, b: np.ndarray,
                                  sigma: np.ndarray, component: str) -> np.ndarray:
        if component not in COMPONENTS:
            raise DomainError(f"未知分量: {component}")
        i, j = COMPONENTS[component]
        a = np.atleast_1d(np.asarray(a, dtype=float))
        b = np.atleast_1d(np.asarray(b, dtype=float))
        if self.structure == TimeStructure.CONSTANT:
            s0 = self.sigma_values(np.zeros(1), sigma)[0]
            return (b - a) * s0[i, j]
        return integrate_intervals(lambda t: self.sigma_values(t, sigma)[..., i, j], a, b)

    def drift_increments(self, a: np.ndarray, b: np.ndarray, theta: np.ndarray) -> np.ndarray:
        """每个区间上 ∫μ_s ds，形如 (m, 2)"""
        a = np.atleast_1d(np.asarray(a, dtype=float))
        b = np.atleast_1d(np.asarray(b, dtype=float))
        if self.structure == TimeStructure.CONSTANT:
            m0 = self.drift_values(np.zeros(1), theta)[0]
            return (b - a)[:, None] * m0[None, :]
        return integrate_intervals(lambda t: self.drift_values(t, theta), a, b)

    # ------------------------------------------------------------------
    # 带检查的逐点运算
    # ------------------------------------------------------------------
    def sigma_matrix(self, t: float, sigma: Any) -> np.ndarray:
        sigma = self.params.check_sigma(sigma)
        if t < 0:
            raise DomainError(f"时间必须非负: t={t}")
        return self.sigma_values(np.array([t]), sigma)[0]

    def local_correlation(self, t: float, sigma: Any) -> float:
        sigma = self.params.check_sigma(sigma)
        if t < 0:
            raise DomainError(f"时间必须非负: t={t}")
        return float(self.correlation_values(np.array([t]), sigma)[0])

    def integrate_sigma(self, interval: Tuple[float, float], sigma: Any, component: str) -> float:
        sigma = self.params.check_sigma(sigma)
        a, b = _check_interval(interval)
        return float(self.sigma_component_integrals(np.array([a]), np.array([b]),
                                                    sigma, component)[0])

    def increment_drift(self, interval: Tuple[float, float], theta: Any, coordinate: int) -> float:
        theta = self.params.check_theta(theta)
        a, b = _check_interval(interval)
        if coordinate not in (1, 2):
            raise DomainError(f"坐标必须为 1 或 2: {coordinate}")
        inc = self.drift_increments(np.array([a]), np.array([b]), theta)
        return float(inc[0, coordinate - 1])

    def phi_values(self, t: Any, theta: np.ndarray, sigma0: np.ndarray,
                   theta0: np.ndarray) -> np.ndarray:
        """φ_{l,t}(θ)，形如 t.shape + (2,)"""
        s0 = self.sigma_values(t, sigma0)
        scale = np.sqrt(np.stack([s0[..., 0, 0], s0[..., 1, 1]], axis=-1))
        return (self.drift_values(t, theta) - self.drift_values(t, theta0)) / scale

    def phi(self, t: float, theta: Any, coordinate: int,
            sigma0: Optional[Any] = None, theta0: Optional[Any] = None) -> float:
        theta = self.params.check_theta(theta)
        if sigma0 is None or theta0 is None:
            sigma0, theta0 = self.params.require_truth()
        if coordinate not in (1, 2):
            raise DomainError(f"坐标必须为 1 或 2: {coordinate}")
        theta0 = np.atleast_1d(np.asarray(theta0, dtype=float))
        if np.array_equal(theta, theta0):
            return 0.0
        val = self.phi_values(np.array([t]), theta, np.asarray(sigma0, dtype=float), theta0)
        return float(val[0, coordinate - 1])

    # ------------------------------------------------------------------
    # 导数（中心差分，除非提供解析导数）
    # ------------------------------------------------------------------
    def sigma_derivatives(self, t: np.ndarray, sigma: np.ndarray) -> np.ndarray:
        """∂_σ Σ_t(σ)，形如 t.shape + (d1, 2, 2)"""
        sigma = np.asarray(sigma, dtype=float)
        if self.sigma_jacobian is not None:
            return np.asarray(self.sigma_jacobian(t, sigma), dtype=float)
        steps = fd_step(sigma)
        out = []
        for k in range(sigma.size):
            e = np.zeros_like(sigma)
            e[k] = steps[k]
            diff = self.sigma_values(t, sigma + e) - self.sigma_values(t, sigma - e)
            out.append(diff / (2.0 * steps[k]))
        return np.stack(out, axis=-3)

    def drift_derivatives(self, t: np.ndarray, theta: np.ndarray) -> np.ndarray:
        """∂_θ μ_t(θ)，形如 t.shape + (d2, 2)"""
        theta = np.asarray(theta, dtype=float)
        steps = fd_step(theta)
        out = []
        for k in range(theta.size):
            e = np.zeros_like(theta)
            e[k] = steps[k]
            diff = self.drift_values(t, theta + e) - self.drift_values(t, theta - e)
            out.append(diff / (2.0 * steps[k]))
        return np.stack(out, axis=-2)

    # ------------------------------------------------------------------
    # 随机探测审计：椭圆性界与相关系数上界
    # ------------------------------------------------------------------
    def audit(self, n_probes: int = 1000, seed: int = 0,
              horizon: Optional[float] = None) -> Dict[str, float]:
        """
        随机探测 (t, σ)，检查对称性、椭圆性界与相关系数上界

        Returns:
            探测到的最小/最大特征值与最大 |ρ|

        Raises:
            DomainError: 任一探测点违反声明的界
        """
        rng = np.random.default_rng(seed)
        if horizon is None:
            horizon = self.period if self.period else 100.0
        lo, hi = self.params.sigma_lower, self.params.sigma_upper
        sigmas = lo + (hi - lo) * rng.random((n_probes, self.params.d1))
        ts = horizon * rng.random(n_probes)

        min_eig, max_eig, max_rho = np.inf, -np.inf, 0.0
        for t, sigma in zip(ts, sigmas):
            s = self.sigma_values(np.array([t]), sigma)[0]
            if not np.allclose(s, s.T, rtol=0, atol=1e-12 * max(1.0, np.abs(s).max())):
                raise DomainError(f"Σ_t 不对称: t={t:.4f}, σ={sigma.tolist()}")
            eig = np.linalg.eigvalsh(s)
            rho = s[0, 1] / np.sqrt(s[0, 0] * s[1, 1])
            min_eig = min(min_eig, eig[0])
            max_eig = max(max_eig, eig[-1])
            max_rho = max(max_rho, abs(rho))
            slack = 1e-12 * max(1.0, self.c2)
            if eig[0] < self.c1 - slack or eig[-1] > self.c2 + slack:
                raise DomainError(
                    f"椭圆性界被破坏: 特征值 {eig.tolist()} 不在 [{self.c1}, {self.c2}] 内, "
                    f"t={t:.4f}, σ={sigma.tolist()}")
            if abs(rho) > self.rho_max + 1e-12:
                raise DomainError(
                    f"|ρ_t|={abs(rho):.6f} 超过 rho_max={self.rho_max}, t={t:.4f}, σ={sigma.tolist()}")

        logger.info(f"模型 {self.name} 审计通过: 特征值∈[{min_eig:.4g}, {max_eig:.4g}], "
                    f"max|ρ|={max_rho:.4f}")
        return {"min_eigenvalue": float(min_eig), "max_eigenvalue": float(max_eig),
                "max_abs_rho": float(max_rho), "n_probes": int(n_probes)}


def _check_interval(interval: Tuple[float, float]) -> Tuple[float, float]:
    a, b = float(interval[0]), float(interval[1])
    if not (0.0 <= a < b):
        raise DomainError(f"区间须满足 0 ≤ a < b: ({a}, {b}]")
    return a, b


# ----------------------------------------------------------------------
# 内置模型族
# ----------------------------------------------------------------------
SIGMA_ROLES = ("vol", "vol1", "vol2", "rho")
THETA_ROLES = ("mu", "mu1", "mu2")
DEFAULT_FIXED = {"vol1": 1.0, "vol2": 1.0, "rho": 0.0, "mu1": 0.0, "mu2": 0.0}


def _resolve_roles(names: Sequence[str], values: np.ndarray,
                   fixed: Dict[str, float]) -> Dict[str, float]:
    out = {k: float(v) for k, v in DEFAULT_FIXED.items()}
    out.update({k: float(v) for k, v in fixed.items()})
    free = {name: float(val) for name, val in zip(names, values)}
    out.update(free)
    if "vol" in out:
        vol = out["vol"]
        out["vol1"] = free.get("vol1", vol)
        out["vol2"] = free.get("vol2", vol)
    if "mu" in out:
        mu = out["mu"]
        out["mu1"] = free.get("mu1", mu)
        out["mu2"] = free.get("mu2", mu)
    return out


def _cholesky_like(vol1: float, vol2: float, rho: float) -> np.ndarray:
    return np.array([[vol1, 0.0],
                     [vol2 * rho, vol2 * np.sqrt(max(1.0 - rho * rho, 0.0))]])


class RoleDiffusion:
    """b_t(σ) = (1 + amplitude·sin(2πt/P))·[[v1, 0], [v2·ρ, v2·√(1-ρ²)]]"""

    def __init__(self, names: Sequence[str], fixed: Dict[str, float],
                 amplitude: float = 0.0, period: Optional[float] = None):
        self.names = tuple(names)
        self.fixed = dict(fixed)
        self.amplitude = amplitude
        self.omega = 2.0 * np.pi / period if period else 0.0

    def __call__(self, t: np.ndarray, sigma: np.ndarray) -> np.ndarray:
        r = _resolve_roles(self.names, sigma, self.fixed)
        b = _cholesky_like(r["vol1"], r["vol2"], r["rho"])
        g = 1.0 + self.amplitude * np.sin(self.omega * t)
        return g[..., None, None] * b


class RoleDrift:
    """μ_t(θ) = (1 + amplitude·cos(2πt/P))·(m1, m2)"""

    def __init__(self, names: Sequence[str], fixed: Dict[str, float],
                 amplitude: float = 0.0, period: Optional[float] = None):
        self.names = tuple(names)
        self.fixed = dict(fixed)
        self.amplitude = amplitude
        self.omega = 2.0 * np.pi / period if period else 0.0

    def __call__(self, t: np.ndarray, theta: np.ndarray) -> np.ndarray:
        r = _resolve_roles(self.names, theta, self.fixed)
        m = np.array([r["mu1"], r["mu2"]])
        h = 1.0 + self.amplitude * np.cos(self.omega * t)
        return h[..., None] * m


def _validate_roles(params: ParamSpace) -> None:
    for name in params.sigma_names:
        if name not in SIGMA_ROLES:
            raise ConfigError(f"未知的扩散参数名 {name}，可选 {SIGMA_ROLES}", field="model.sigma")
    for name in params.theta_names:
        if name not in THETA_ROLES:
            raise ConfigError(f"未知的漂移参数名 {name}，可选 {THETA_ROLES}", field="model.theta")
    if "rho" in params.sigma_names:
        idx = params.sigma_names.index("rho")
        if params.sigma_lower[idx] <= -1 or params.sigma_upper[idx] >= 1:
            raise ConfigError("rho 的盒约束必须位于 (-1, 1) 内", field="model.sigma")


def _declared_bounds(params: ParamSpace, sigma_values: Callable[[np.ndarray, np.ndarray], np.ndarray],
                     horizon: float) -> Tuple[float, float, float]:
    """在 Θ1 盒的粗网格（每维 8 点）与时间网格上求保守的 c1, c2, ρ_max"""
    axes = [np.linspace(lo, hi, 8) for lo, hi in params.sigma_bounds]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, params.d1)
    ts = np.linspace(0.0, horizon, 65)
    lo_eig, hi_eig, rho = np.inf, 0.0, 0.0
    for sigma in grid:
        s = sigma_values(ts, sigma)
        eig = np.linalg.eigvalsh(s)
        lo_eig = min(lo_eig, float(eig[:, 0].min()))
        hi_eig = max(hi_eig, float(eig[:, -1].max()))
        r = s[:, 0, 1] / np.sqrt(s[:, 0, 0] * s[:, 1, 1])
        rho = max(rho, float(np.abs(r).max()))
    return 0.5 * lo_eig, 2.0 * hi_eig, min(rho, 0.999)


def constant_model(params: ParamSpace, fixed: Optional[Dict[str, float]] = None,
                   c1: Optional[float] = None, c2: Optional[float] = None,
                   rho_max: Optional[float] = None) -> CoefficientModel:
    """
    常系数模型族

    b(σ) = [[v1, 0], [v2·ρ, v2·√(1-ρ²)]]，μ(θ) = (m1, m2)。
    自由参数从 vol/vol1/vol2/rho 与 mu/mu1/mu2 中选取，其余取 fixed 中的值。
    """
    fixed = dict(fixed or {})
    _validate_roles(params)
    model = CoefficientModel(params, RoleDrift(params.theta_names, fixed),
                             RoleDiffusion(params.sigma_names, fixed),
                             structure=TimeStructure.CONSTANT, drift_linear=True,
                             name="constant")
    _apply_bounds(model, c1, c2, rho_max, horizon=1.0)
    return model


def periodic_model(params: ParamSpace, period: float, amplitude: float = 0.5,
                   drift_amplitude: float = 0.0, fixed: Optional[Dict[str, float]] = None,
                   c1: Optional[float] = None, c2: Optional[float] = None,
                   rho_max: Optional[float] = None) -> CoefficientModel:
    """
    周期系数模型族

    b_t(σ) = (1 + amplitude·sin(2πt/P))·b(σ)，
    μ_t(θ) = (1 + drift_amplitude·cos(2πt/P))·(m1, m2)。
    """
    if not (0 <= amplitude < 1):
        raise ConfigError("amplitude 须位于 [0, 1)", field="model.amplitude")
    if period is None or period <= 0:
        raise ConfigError("周期模型必须给出正的周期", field="model.period")
    fixed = dict(fixed or {})
    _validate_roles(params)
    model = CoefficientModel(params,
                             RoleDrift(params.theta_names, fixed, drift_amplitude, period),
                             RoleDiffusion(params.sigma_names, fixed, amplitude, period),
                             structure=TimeStructure.PERIODIC, period=period,
                             drift_linear=True, name="periodic")
    _apply_bounds(model, c1, c2, rho_max, horizon=period)
    return model


def _apply_bounds(model: CoefficientModel, c1: Optional[float], c2: Optional[float],
                  rho_max: Optional[float], horizon: float) -> None:
    if c1 is None or c2 is None or rho_max is None:
        auto = _declared_bounds(model.params, model.sigma_values, horizon)
        c1 = auto[0] if c1 is None else c1
        c2 = auto[1] if c2 is None else c2
        rho_max = auto[2] if rho_max is None else rho_max
    if not (0 < c1 <= c2):
        raise ConfigError("椭圆性界须满足 0 < c1 ≤ c2", field="model.c1")
    if not (0.0 <= rho_max < 1.0):
        raise ConfigError("rho_max 须位于 [0, 1)", field="model.rho_max")
    model.c1, model.c2, model.rho_max = float(c1), float(c2), float(rho_max)


def load_custom_model(factory: str, params: ParamSpace, options: Dict[str, Any]) -> CoefficientModel:
    """
    加载用户提供的模型工厂，格式为 "package.module:function"

    工厂函数签名为 factory(params, **options) -> CoefficientModel
    """
    if ":" not in factory:
        raise ConfigError("工厂路径格式应为 'module:function'", field="model.factory")
    module_name, func_name = factory.split(":", 1)
    try:
        module = importlib.import_module(module_name)
        func = getattr(module, func_name)
    except (ImportError, AttributeError) as e:
        raise ConfigError(f"无法加载模型工厂 {factory}: {e}", field="model.factory")
    model = func(params, **options)
    if not isinstance(model, CoefficientModel):
        raise ConfigError("模型工厂必须返回 CoefficientModel", field="model.factory")
    return model


# ----------------------------------------------------------------------
# 单点求值的函数式接口
# ----------------------------------------------------------------------
def sigma_matrix(model: CoefficientModel, t: float, sigma: Any) -> np.ndarray:
    """Σ_t(σ) = b_t(σ) b_t(σ)^T"""
    return model.sigma_matrix(t, sigma)


def local_correlation(model: CoefficientModel, t: float, sigma: Any) -> float:
    """ρ_t(σ)"""
    return model.local_correlation(t, sigma)


def integrate_sigma(model: CoefficientModel, interval: Tuple[float, float],
                    sigma: Any, component: str) -> float:
    """∫_a^b [Σ_t(σ)]_component dt"""
    return model.integrate_sigma(interval, sigma, component)


def increment_drift(model: CoefficientModel, interval: Tuple[float, float],
                    theta: Any, coordinate: int) -> float:
    """∫_a^b μ_s^l(θ) ds"""
    return model.increment_drift(interval, theta, coordinate)


def phi(model: CoefficientModel, t: float, theta: Any, coordinate: int,
        sigma0: Optional[Any] = None, theta0: Optional[Any] = None) -> float:
    """φ_{l,t}(θ) = [Σ_t(σ0)]_ll^{-1/2}(μ_t^l(θ) − μ_t^l(θ0))"""
    return model.phi(t, theta, coordinate, sigma0, theta0)
