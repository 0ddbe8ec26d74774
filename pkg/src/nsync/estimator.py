#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
两阶段拟似然估计
先在 Θ1 上最大化 H_n^1 得到 σ̂，再固定 S_n(σ̂) 在 Θ2 上最大化 H_n^2 得到 θ̂，
并给出代入式与观测信息两种标准误以及 Hayashi-Yoshida 协变估计

作者: NSync Team
创建时间: 2026-10-19
版本: 1.0.0
"""

import itertools
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
from scipy import optimize, stats

from .asymptotics import gamma1, gamma2
from .errors import (ConfigError, ContractError, EstimationError, IdentifiabilityError, NSyncError,
                     NotPositiveDefiniteError, NumericalError)
from .gaussian import (CovarianceLayout, CovarianceOperator, IncrementVector, assemble,
                       drift_vector)
from .model import CoefficientModel
from .sampling import OverlapMatrix, SamplingScheme, build_overlap, max_gap

logger = logging.getLogger(__name__)

# 观测信息 Hessian 的差分步长系数
HESSIAN_STEP = 1e-4
# GLS 法方程条件数上限
GLS_COND_LIMIT = 1e12
# 95% 置信区间的正态分位数
Z_975 = float(stats.norm.ppf(0.975))


@dataclass
class OptimizerConfig:
    """
    优化器配置

    Attributes:
        theta_method: "auto"（漂移线性时用 GLS）| "gls" | "simplex"
        grid_resolution: 每维多起点网格的点数
        xtol, ftol: 参数与目标函数的收敛容差
        max_evaluations: 每个起点的最大函数求值次数
        boundary_tol: 判定贴边的相对容差
    """
    theta_method: str = "auto"
    grid_resolution: int = 3
    xtol: float = 1e-8
    ftol: float = 1e-10
    max_evaluations: int = 2000
    boundary_tol: float = 1e-6

    def __post_init__(self) -> None:
        if self.theta_method not in ("auto", "gls", "simplex"):
            raise ConfigError(f"未知的 θ 求解方法: {self.theta_method}",
                              field="estimator.theta_method")
        if self.grid_resolution < 1:
            raise ConfigError("多起点网格分辨率必须 ≥ 1", field="estimator.grid_resolution")
        if self.xtol <= 0 or self.ftol <= 0:
            raise ConfigError("收敛容差必须为正", field="estimator.xtol")
        if self.max_evaluations < 1:
            raise ConfigError("最大求值次数必须 ≥ 1", field="estimator.max_evaluations")
        if self.boundary_tol <= 0:
            raise ConfigError("贴边容差必须为正", field="estimator.boundary_tol")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "OptimizerConfig":
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        return cls(**known)


@dataclass
class StageResult:
    """单个阶段的优化结果"""
    estimate: np.ndarray
    objective: float
    converged: bool
    evaluations: int
    boundary: List[bool]
    method: str
    starts: int = 1


@dataclass
class EstimateReport:
    """两阶段估计报告"""
    sigma_names: Sequence[str]
    theta_names: Sequence[str]
    sigma: StageResult
    theta: StageResult
    scheme_summary: Dict[str, Any]
    cov_sigma_plugin: Optional[np.ndarray] = None
    cov_theta_plugin: Optional[np.ndarray] = None
    cov_sigma_observed: Optional[np.ndarray] = None
    cov_theta_observed: Optional[np.ndarray] = None
    warnings: List[str] = field(default_factory=list)

    @property
    def sigma_hat(self) -> np.ndarray:
        return self.sigma.estimate

    @property
    def theta_hat(self) -> np.ndarray:
        return self.theta.estimate

    @staticmethod
    def _se(cov: Optional[np.ndarray]) -> Optional[np.ndarray]:
        if cov is None:
            return None
        return np.sqrt(np.clip(np.diag(cov), 0.0, None))

    @property
    def se_sigma(self) -> Optional[np.ndarray]:
        """优先使用代入式标准误，缺失时退回观测信息"""
        cov = self.cov_sigma_plugin if self.cov_sigma_plugin is not None else self.cov_sigma_observed
        return self._se(cov)

    @property
    def se_theta(self) -> Optional[np.ndarray]:
        cov = self.cov_theta_plugin if self.cov_theta_plugin is not None else self.cov_theta_observed
        return self._se(cov)

    def confidence_intervals(self) -> Dict[str, Optional[List[float]]]:
        out: Dict[str, Optional[List[float]]] = {}
        for names, est, se in ((self.sigma_names, self.sigma_hat, self.se_sigma),
                               (self.theta_names, self.theta_hat, self.se_theta)):
            for k, name in enumerate(names):
                out[name] = None if se is None else [float(est[k] - Z_975 * se[k]),
                                                     float(est[k] + Z_975 * se[k])]
        return out

    def to_dict(self) -> Dict[str, Any]:
        def tolist(x: Optional[np.ndarray]) -> Optional[List[Any]]:
            return None if x is None else np.asarray(x).tolist()

        out: Dict[str, Any] = dict(self.scheme_summary)
        out.update({
            "sigma_names": list(self.sigma_names),
            "theta_names": list(self.theta_names),
            "sigma_hat": tolist(self.sigma_hat),
            "theta_hat": tolist(self.theta_hat),
            "h1": self.sigma.objective,
            "h2": self.theta.objective,
            "sigma_converged": self.sigma.converged,
            "theta_converged": self.theta.converged,
            "sigma_evaluations": self.sigma.evaluations,
            "theta_evaluations": self.theta.evaluations,
            "sigma_boundary": list(self.sigma.boundary),
            "theta_boundary": list(self.theta.boundary),
            "theta_method": self.theta.method,
            "cov_sigma_plugin": tolist(self.cov_sigma_plugin),
            "cov_theta_plugin": tolist(self.cov_theta_plugin),
            "cov_sigma_observed": tolist(self.cov_sigma_observed),
            "cov_theta_observed": tolist(self.cov_theta_observed),
            "se_sigma_plugin": tolist(self._se(self.cov_sigma_plugin)),
            "se_theta_plugin": tolist(self._se(self.cov_theta_plugin)),
            "se_sigma_observed": tolist(self._se(self.cov_sigma_observed)),
            "se_theta_observed": tolist(self._se(self.cov_theta_observed)),
            "confidence_intervals": self.confidence_intervals(),
            "warnings": list(self.warnings),
        })
        return out


class QuasiLikelihood:
    """
    绑定一组观测的拟似然

    重叠矩阵与时间排列只计算一次，供所有 σ、θ 求值复用。
    """

    def __init__(self, dx: IncrementVector, model: CoefficientModel,
                 overlap: Optional[OverlapMatrix] = None):
        self.dx = dx
        self.scheme = dx.scheme
        self.model = model
        self.overlap = overlap if overlap is not None else build_overlap(self.scheme)
        self.layout = CovarianceLayout.from_overlap(self.overlap)

    def covariance(self, sigma: Any, check: bool = True) -> CovarianceOperator:
        return assemble(self.scheme, self.overlap, self.model, sigma, self.layout, check=check)

    def h1(self, sigma: Any, check: bool = True) -> float:
        """H_n^1(σ)；分解失败时返回 −∞"""
        try:
            op = self.covariance(sigma, check=check)
        except NotPositiveDefiniteError:
            return -math.inf
        value = -0.5 * op.quad_form(self.dx.values) - 0.5 * op.logdet()
        return value if math.isfinite(value) else -math.inf

    def h2(self, theta: Any, op: CovarianceOperator, check: bool = True) -> float:
        """H_n^2(θ)，op 为 S_n(σ̂)"""
        xbar = self.dx.values - drift_vector(self.scheme, self.model, theta, check=check)
        return -0.5 * op.quad_form(xbar)


def _start_grid(lower: np.ndarray, upper: np.ndarray, resolution: int) -> List[np.ndarray]:
    """每维取 (k+1)/(res+1) 处的内点，返回笛卡尔积"""
    frac = (np.arange(resolution) + 1.0) / (resolution + 1.0)
    axes = [lo + (hi - lo) * frac for lo, hi in zip(lower, upper)]
    return [np.array(p) for p in itertools.product(*axes)]


def _boundary_flags(x: np.ndarray, lower: np.ndarray, upper: np.ndarray,
                    tol: float) -> List[bool]:
    span = upper - lower
    return [bool(v - lo <= tol * s or hi - v <= tol * s)
            for v, lo, hi, s in zip(x, lower, upper, span)]


def _multistart_simplex(objective: Callable[[np.ndarray], float], lower: np.ndarray,
                        upper: np.ndarray, cfg: OptimizerConfig,
                        stage: str) -> StageResult:
    """有界 Nelder-Mead 多起点搜索，返回最大化目标的结果"""
    bounds = list(zip(lower, upper))

    def negative(x: np.ndarray) -> float:
        value = objective(np.clip(x, lower, upper))
        return -value if math.isfinite(value) else math.inf

    best_x: Optional[np.ndarray] = None
    best_val = -math.inf
    converged = False
    evaluations = 0
    starts = _start_grid(lower, upper, cfg.grid_resolution)
    for x0 in starts:
        if not math.isfinite(objective(x0)):
            evaluations += 1
            logger.debug(f"[{stage}] 起点 {x0.tolist()} 处目标函数无效")
            continue
        res = optimize.minimize(negative, x0, method="Nelder-Mead", bounds=bounds,
                                options={"xatol": cfg.xtol, "fatol": cfg.ftol,
                                         "maxfev": cfg.max_evaluations})
        evaluations += int(res.nfev)
        value = -float(res.fun)
        if math.isfinite(value) and value > best_val:
            best_val = value
            best_x = np.clip(res.x, lower, upper)
            converged = bool(res.success)

    if best_x is None:
        raise EstimationError("所有起点的目标函数都无效", stage=stage)
    return StageResult(estimate=best_x, objective=best_val, converged=converged,
                       evaluations=evaluations,
                       boundary=_boundary_flags(best_x, lower, upper, cfg.boundary_tol),
                       method="simplex", starts=len(starts))


def h1(sigma: Any, dx: IncrementVector, scheme: SamplingScheme,
       model: CoefficientModel) -> float:
    """H_n^1(σ) = −½ΔX^T S_n^{-1}(σ) ΔX − ½ log det S_n(σ)"""
    _check_scheme(dx, scheme)
    return QuasiLikelihood(dx, model).h1(sigma)


def h2(theta: Any, sigma_hat: Any, dx: IncrementVector, scheme: SamplingScheme,
       model: CoefficientModel) -> float:
    """H_n^2(θ) = −½X̄(θ)^T S_n^{-1}(σ̂) X̄(θ)"""
    _check_scheme(dx, scheme)
    ql = QuasiLikelihood(dx, model)
    return ql.h2(theta, ql.covariance(sigma_hat))


def _check_scheme(dx: IncrementVector, scheme: SamplingScheme) -> None:
    if dx.scheme is not scheme and (dx.scheme.M1, dx.scheme.M2) != (scheme.M1, scheme.M2):
        raise ContractError("增量与观测方案不匹配")


def maximize_h1(dx: IncrementVector, scheme: SamplingScheme, model: CoefficientModel,
                cfg: Optional[OptimizerConfig] = None,
                likelihood: Optional[QuasiLikelihood] = None) -> StageResult:
    """
    第一阶段：在 clos(Θ1) 上最大化 H_n^1

    Raises:
        EstimationError: 所有起点都得不到有限的目标值
    """
    cfg = cfg or OptimizerConfig()
    _check_scheme(dx, scheme)
    ql = likelihood or QuasiLikelihood(dx, model)
    p = model.params
    result = _multistart_simplex(lambda s: ql.h1(s, check=False), p.sigma_lower,
                                 p.sigma_upper, cfg, stage="sigma")
    if any(result.boundary):
        logger.warning(f"σ̂={result.estimate.tolist()} 贴近 Θ1 边界")
    return result


def maximize_h2(sigma_hat: Any, dx: IncrementVector, scheme: SamplingScheme,
                model: CoefficientModel, cfg: Optional[OptimizerConfig] = None,
                likelihood: Optional[QuasiLikelihood] = None,
                op: Optional[CovarianceOperator] = None) -> StageResult:
    """
    第二阶段：固定 S_n(σ̂) 在 clos(Θ2) 上最大化 H_n^2

    漂移关于 θ 线性时使用广义最小二乘闭式解，法方程奇异时退回单纯形搜索。
    """
    cfg = cfg or OptimizerConfig()
    _check_scheme(dx, scheme)
    ql = likelihood or QuasiLikelihood(dx, model)
    p = model.params
    if op is None:
        op = ql.covariance(sigma_hat, check=False)

    use_gls = cfg.theta_method == "gls" or (cfg.theta_method == "auto" and model.drift_linear)
    if use_gls:
        if not model.drift_linear:
            logger.warning("漂移不是 θ 的线性函数，GLS 结果只是局部近似")
        result = _gls_theta(ql, op, cfg)
        if result is not None:
            return result
        logger.warning("GLS 法方程奇异，改用单纯形搜索")

    result = _multistart_simplex(lambda t: ql.h2(t, op, check=False), p.theta_lower,
                                 p.theta_upper, cfg, stage="theta")
    if any(result.boundary):
        logger.warning(f"θ̂={result.estimate.tolist()} 贴近 Θ2 边界")
    return result


def _gls_theta(ql: QuasiLikelihood, op: CovarianceOperator,
               cfg: OptimizerConfig) -> Optional[StageResult]:
    p = ql.model.params
    center = 0.5 * (p.theta_lower + p.theta_upper)
    v0 = drift_vector(ql.scheme, ql.model, center, check=False)
    design = np.empty((ql.scheme.M, p.d2))
    for k in range(p.d2):
        e = np.zeros(p.d2)
        e[k] = 1.0
        design[:, k] = drift_vector(ql.scheme, ql.model, center + e, check=False) - v0
    weighted = op.solve(design)
    normal = design.T @ weighted
    if not np.all(np.isfinite(normal)) or np.linalg.cond(normal) > GLS_COND_LIMIT:
        return None
    rhs = weighted.T @ (ql.dx.values - v0)
    theta = center + np.linalg.solve(normal, rhs)
    projected = np.clip(theta, p.theta_lower, p.theta_upper)
    if not np.array_equal(projected, theta):
        logger.warning(f"GLS 解 {theta.tolist()} 超出 Θ2，已投影到边界")
    value = ql.h2(projected, op, check=False)
    return StageResult(estimate=projected, objective=value, converged=True, evaluations=1,
                       boundary=_boundary_flags(projected, p.theta_lower, p.theta_upper,
                                                cfg.boundary_tol),
                       method="gls")


def fd_gradient(fn: Callable[[np.ndarray], float], x: Any, rel_step: float = 1e-5) -> np.ndarray:
    """中心差分梯度"""
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    for k in range(x.size):
        h = rel_step * (1.0 + abs(x[k]))
        e = np.zeros_like(x)
        e[k] = h
        grad[k] = (fn(x + e) - fn(x - e)) / (2.0 * h)
    return grad


def fd_hessian(fn: Callable[[np.ndarray], float], x: Any,
               rel_step: float = HESSIAN_STEP) -> np.ndarray:
    """中心差分 Hessian，步长 rel_step·(1+|x|)"""
    x = np.asarray(x, dtype=float)
    d = x.size
    steps = rel_step * (1.0 + np.abs(x))
    f0 = fn(x)
    hess = np.zeros((d, d))
    for i in range(d):
        ei = np.zeros(d)
        ei[i] = steps[i]
        hess[i, i] = (fn(x + ei) - 2.0 * f0 + fn(x - ei)) / steps[i] ** 2
        for j in range(i + 1, d):
            ej = np.zeros(d)
            ej[j] = steps[j]
            val = (fn(x + ei + ej) - fn(x + ei - ej) - fn(x - ei + ej) + fn(x - ei - ej))
            hess[i, j] = hess[j, i] = val / (4.0 * steps[i] * steps[j])
    return hess


def _observed_covariance(hess: np.ndarray) -> Optional[np.ndarray]:
    if not np.all(np.isfinite(hess)):
        return None
    info = -0.5 * (hess + hess.T)
    eig = np.linalg.eigvalsh(info)
    if eig[0] <= 0:
        return None
    return np.linalg.inv(info)


def estimate(dx: IncrementVector, scheme: SamplingScheme, model: CoefficientModel,
             cfg: Optional[OptimizerConfig] = None, constants: Optional[Any] = None) -> EstimateReport:
    """
    两阶段估计

    Args:
        dx: 增量
        scheme: 观测方案
        model: 系数模型
        cfg: 优化器配置
        constants: 方案常数（SchemeConstants 或 LimitConstants），缺省时不给代入式标准误

    Returns:
        EstimateReport

    Raises:
        EstimationError: 任一阶段失败，stage 指明阶段
    """
    cfg = cfg or OptimizerConfig()
    ql = QuasiLikelihood(dx, model)
    try:
        sigma_res = maximize_h1(dx, scheme, model, cfg, likelihood=ql)
    except EstimationError:
        raise
    except NSyncError as e:
        raise EstimationError(str(e), stage="sigma")
    sigma_hat = sigma_res.estimate

    try:
        op = ql.covariance(sigma_hat, check=False)
        theta_res = maximize_h2(sigma_hat, dx, scheme, model, cfg, likelihood=ql, op=op)
    except EstimationError:
        raise
    except NSyncError as e:
        raise EstimationError(str(e), stage="theta")
    theta_hat = theta_res.estimate

    report = EstimateReport(
        sigma_names=model.params.sigma_names, theta_names=model.params.theta_names,
        sigma=sigma_res, theta=theta_res,
        scheme_summary={"n": scheme.n, "h_n": scheme.h_n, "T_n": scheme.T_n,
                        "M1": scheme.M1, "M2": scheme.M2, "r_n": max_gap(scheme),
                        "rho_bar": op.rho_bar})

    if constants is not None:
        try:
            g1 = gamma1(model, constants, sigma_hat)
            g2 = gamma2(model, constants, sigma_hat, theta_hat)
            report.cov_sigma_plugin = np.linalg.inv(g1) / scheme.n
            report.cov_theta_plugin = np.linalg.inv(g2) / scheme.T_n
        except (IdentifiabilityError, NumericalError) as e:
            report.warnings.append(f"代入式协方差不可用: {e}")
            logger.warning(f"代入式协方差不可用: {e}")

    h_sigma = fd_hessian(lambda s: ql.h1(s, check=False), sigma_hat)
    report.cov_sigma_observed = _observed_covariance(h_sigma)
    h_theta = fd_hessian(lambda t: ql.h2(t, op, check=False), theta_hat)
    report.cov_theta_observed = _observed_covariance(h_theta)
    if report.cov_sigma_observed is None or report.cov_theta_observed is None:
        report.warnings.append("观测信息矩阵不是正定的")
        logger.warning("观测信息矩阵不是正定的，相应标准误缺失")

    logger.info(f"估计完成: σ̂={np.round(sigma_hat, 6).tolist()}, "
                f"θ̂={np.round(theta_hat, 6).tolist()}")
    return report


def hayashi_yoshida(dx: IncrementVector, g: OverlapMatrix) -> float:
    """Σ_{(i,j) 重叠} Δ_i¹X·Δ_j²X"""
    if (g.M1, g.M2) != (dx.scheme.M1, dx.scheme.M2):
        raise ContractError("增量与重叠矩阵维度不符")
    return float(np.sum(dx.delta1[g.rows] * dx.delta2[g.cols]))
