#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
蒙特卡洛实验
并行执行"生成方案 → 精确模拟 → 两阶段估计"的重复实验，
逐次结果汇总为 pandas 表格，并计算偏差、标准差比、覆盖率与正态性统计量

作者: NSync Team
创建时间: 2026-10-19
版本: 1.0.0
"""

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, TypeVar

import numpy as np
import pandas as pd
from scipy import stats
from tqdm import tqdm

from .asymptotics import gamma1, gamma2, sqrt_psd
from .errors import ConfigError, NSyncError, RunFailureError
from .estimator import Z_975, OptimizerConfig, estimate, hayashi_yoshida
from .gaussian import assemble, simulate_increments
from .model import CoefficientModel
from .sampling import SchemeGenerator

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

# 失败比例超过该值时整个运行视为失败
MAX_FAILURE_RATE = 0.10
# 低于该重复次数时给出警告
MIN_RECOMMENDED_REPLICATIONS = 50


def run_replications(fn: Callable[[T], R], tasks: Sequence[T], workers: int = 1,
                     show_progress: bool = False, desc: str = "") -> List[R]:
    """
    执行一组相互独立的重复实验，结果按任务顺序返回

    Args:
        fn: 模块级的纯函数（多进程时需可 pickle）
        tasks: 任务列表
        workers: 进程数，≤ 1 时在当前进程顺序执行
        show_progress: 是否显示 tqdm 进度条
        desc: 进度条标题

    Returns:
        与 tasks 一一对应的结果列表
    """
    if workers <= 1 or len(tasks) <= 1:
        return [fn(task) for task in tqdm(tasks, desc=desc, disable=not show_progress)]

    results: List[Any] = [None] * len(tasks)
    with ProcessPoolExecutor(max_workers=workers) as executor:
        futures = {executor.submit(fn, task): idx for idx, task in enumerate(tasks)}
        for future in tqdm(as_completed(futures), total=len(futures), desc=desc,
                           disable=not show_progress):
            results[futures[future]] = future.result()
    return results


def replication_seed(base_seed: int, index: int) -> np.random.SeedSequence:
    """第 index 次重复的子种子，仅取决于 (base_seed, index)"""
    return np.random.SeedSequence([int(base_seed), int(index)])


def result_columns(model: CoefficientModel) -> List[str]:
    """逐次结果 CSV 的列顺序"""
    p = model.params
    cols = ["seed", "index", "n", "h_n", "M1", "M2", "r_n", "rho_bar"]
    cols += [f"sigma_hat_{name}" for name in p.sigma_names]
    cols += [f"theta_hat_{name}" for name in p.theta_names]
    for kind in ("plugin", "observed"):
        cols += [f"se_{kind}_{name}" for name in p.sigma_names]
        cols += [f"se_{kind}_{name}" for name in p.theta_names]
    cols += ["theta_method", "sigma_converged", "boundary", "hy", "rho_ql", "error"]
    return cols


@dataclass(frozen=True)
class ReplicationTask:
    """一次蒙特卡洛重复所需的全部只读输入"""
    model: CoefficientModel
    generator: SchemeGenerator
    n: int
    h_n: float
    optimizer: OptimizerConfig
    constants: Any
    base_seed: int
    index: int


def run_one(task: ReplicationTask) -> Dict[str, Any]:
    """
    单次重复；估计过程中的 NSyncError 记录在 error 列而不向外抛出
    """
    model = task.model
    p = model.params
    sigma0, theta0 = p.require_truth()
    row: Dict[str, Any] = {"seed": task.base_seed, "index": task.index,
                           "n": task.n, "h_n": task.h_n, "error": ""}
    scheme_ss, noise_ss = replication_seed(task.base_seed, task.index).spawn(2)
    try:
        scheme = task.generator.draw(task.n, task.h_n, scheme_ss)
        op0 = assemble(scheme, None, model, sigma0)
        dx = simulate_increments(scheme, model, sigma0, theta0, noise_ss, op=op0)
        report = estimate(dx, scheme, model, task.optimizer, task.constants)
    except NSyncError as e:
        row["error"] = f"{type(e).__name__}: {e}"
        return row

    row.update({k: report.scheme_summary[k] for k in ("M1", "M2", "r_n", "rho_bar")})
    for k, name in enumerate(p.sigma_names):
        row[f"sigma_hat_{name}"] = float(report.sigma_hat[k])
    for k, name in enumerate(p.theta_names):
        row[f"theta_hat_{name}"] = float(report.theta_hat[k])
    for kind, cov_s, cov_t in (("plugin", report.cov_sigma_plugin, report.cov_theta_plugin),
                               ("observed", report.cov_sigma_observed, report.cov_theta_observed)):
        for names, cov in ((p.sigma_names, cov_s), (p.theta_names, cov_t)):
            se = None if cov is None else np.sqrt(np.clip(np.diag(cov), 0.0, None))
            for k, name in enumerate(names):
                row[f"se_{kind}_{name}"] = float("nan") if se is None else float(se[k])
    row["theta_method"] = report.theta.method
    row["sigma_converged"] = report.sigma.converged
    row["boundary"] = bool(any(report.sigma.boundary) or any(report.theta.boundary))
    row["hy"] = hayashi_yoshida(dx, op0.overlap)
    ts = np.linspace(0.0, scheme.T_n, 65)
    row["rho_ql"] = float(np.mean(model.correlation_values(ts, report.sigma_hat)))
    return row


def _normality(z: np.ndarray) -> Dict[str, Optional[float]]:
    if z.size < 3:
        return {"skewness": None, "excess_kurtosis": None, "ks_distance": None}
    return {
        "skewness": float(stats.skew(z)),
        "excess_kurtosis": float(stats.kurtosis(z, fisher=True)),
        "ks_distance": float(stats.kstest(z, "norm").statistic),
    }


def summarize(df: pd.DataFrame, model: CoefficientModel, gamma1_matrix: np.ndarray,
              gamma2_matrix: np.ndarray, n: int, h_n: float) -> Dict[str, Any]:
    """
    汇总成功的重复

    标准化误差为 √n·Γ1^{1/2}(σ̂−σ0) 与 √T_n·Γ2^{1/2}(θ̂−θ0)；理论标准差取自同一个 Γ。
    """
    p = model.params
    sigma0, theta0 = p.require_truth()
    ok = df[df["error"] == ""]
    r = len(ok)
    t_n = n * h_n
    out: Dict[str, Any] = {"replications": r, "parameters": {}}
    if r == 0:
        return out

    blocks = (("sigma", p.sigma_names, sigma0, gamma1_matrix, math.sqrt(n)),
              ("theta", p.theta_names, theta0, gamma2_matrix, math.sqrt(t_n)))
    for stage, names, truth, gamma, rate in blocks:
        est = ok[[f"{stage}_hat_{name}" for name in names]].to_numpy(dtype=float)
        err = est - truth
        theo_sd = np.sqrt(np.diag(np.linalg.inv(gamma)))
        z = rate * err @ sqrt_psd(gamma).T
        for k, name in enumerate(names):
            scaled = rate * err[:, k]
            emp_sd = float(np.std(scaled, ddof=1)) if r > 1 else None
            se_plugin = ok[f"se_plugin_{name}"].to_numpy(dtype=float)
            se_obs = ok[f"se_observed_{name}"].to_numpy(dtype=float)
            se = np.where(np.isfinite(se_plugin), se_plugin, se_obs)
            covered = np.abs(err[:, k]) <= Z_975 * se
            valid = np.isfinite(se)
            entry = {
                "stage": stage,
                "true": float(truth[k]),
                "bias": float(np.mean(err[:, k])),
                "mean_standardized_error": float(np.mean(z[:, k])),
                "empirical_sd": emp_sd,
                "theoretical_sd": float(theo_sd[k]),
                "sd_ratio": None if emp_sd is None else emp_sd / float(theo_sd[k]),
                "rmse": float(np.sqrt(np.mean(err[:, k] ** 2))),
                "coverage": float(np.mean(covered[valid])) if valid.any() else None,
            }
            entry.update(_normality(z[:, k]))
            out["parameters"][name] = entry
    return out


def _baseline(df: pd.DataFrame, model: CoefficientModel, n: int, h_n: float) -> Dict[str, Any]:
    """Hayashi-Yoshida 基准与拟似然隐含相关系数的离散程度对比"""
    ok = df[df["error"] == ""]
    sigma0 = model.params.sigma0
    t_n = n * h_n
    interval = (0.0, t_n)
    ref12 = model.integrate_sigma(interval, sigma0, "12")
    ref11 = model.integrate_sigma(interval, sigma0, "11")
    ref22 = model.integrate_sigma(interval, sigma0, "22")
    hy = ok["hy"].to_numpy(dtype=float)
    rho_hy = hy / math.sqrt(ref11 * ref22)
    rho_ql = ok["rho_ql"].to_numpy(dtype=float)
    r = hy.size
    out: Dict[str, Any] = {"hy_reference": ref12, "hy_mean": float(hy.mean()) if r else None}
    if r > 1:
        sd_hy = float(np.std(rho_hy, ddof=1))
        sd_ql = float(np.std(rho_ql, ddof=1))
        out.update({
            "hy_se": float(np.std(hy, ddof=1) / math.sqrt(r)),
            "rho_hy_sd": sd_hy,
            "rho_ql_sd": sd_ql,
            "sd_ratio_hy_over_ql": sd_hy / sd_ql if sd_ql > 0 else None,
        })
    return out


@dataclass
class RunSummary:
    """蒙特卡洛运行汇总"""
    replications: int
    failures: int
    n: int
    h_n: float
    summary: Dict[str, Any]
    summary_interior: Dict[str, Any]
    baseline: Dict[str, Any]
    gamma1: List[List[float]]
    gamma2: List[List[float]]
    elapsed_seconds: float
    boundary_count: int = 0
    csv_path: Optional[str] = None
    fingerprint: Optional[str] = None
    version: Optional[str] = None
    warnings: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "replications": self.replications,
            "failures": self.failures,
            "failure_rate": self.failures / self.replications if self.replications else 0.0,
            "boundary_count": self.boundary_count,
            "n": self.n,
            "h_n": self.h_n,
            "T_n": self.n * self.h_n,
            "summary": self.summary,
            "summary_excluding_boundary": self.summary_interior,
            "baseline": self.baseline,
            "gamma1": self.gamma1,
            "gamma2": self.gamma2,
            "elapsed_seconds": self.elapsed_seconds,
            "csv_path": self.csv_path,
            "config_fingerprint": self.fingerprint,
            "version": self.version,
            "warnings": self.warnings,
        }


def run_monte_carlo(model: CoefficientModel, generator: SchemeGenerator, n: int, h_n: float,
                    replications: int, constants: Any,
                    optimizer: Optional[OptimizerConfig] = None, seed: int = 0,
                    workers: int = 1, show_progress: bool = False) -> Tuple[pd.DataFrame, RunSummary]:
    """
    蒙特卡洛验证渐近正态性

    Args:
        model: 带真值的系数模型
        generator: 观测方案生成器
        n, h_n: 规模与时间尺度
        replications: 重复次数 R
        constants: 方案常数，用于理论标准差与代入式标准误
        optimizer: 优化器配置
        seed: 基础种子
        workers: 进程数
        show_progress: 是否显示进度条

    Returns:
        (逐次结果表, RunSummary)

    Raises:
        ConfigError: R < 1 或缺少真值
        RunFailureError: 失败比例超过 10%
    """
    if replications < 1:
        raise ConfigError("重复次数必须 ≥ 1", field="run.replications")
    sigma0, theta0 = model.params.require_truth()
    optimizer = optimizer or OptimizerConfig()
    warnings: List[str] = []
    if replications < MIN_RECOMMENDED_REPLICATIONS:
        msg = f"重复次数 R={replications} < {MIN_RECOMMENDED_REPLICATIONS}，汇总统计量不可靠"
        warnings.append(msg)
        logger.warning(msg)

    g1 = gamma1(model, constants, sigma0)
    g2 = gamma2(model, constants, sigma0, theta0)
    tasks = [ReplicationTask(model, generator, n, h_n, optimizer, constants, seed, i)
             for i in range(replications)]
    logger.info(f"开始蒙特卡洛: R={replications}, n={n}, h_n={h_n}, workers={workers}")
    start = time.perf_counter()
    rows = run_replications(run_one, tasks, workers=workers, show_progress=show_progress,
                            desc="蒙特卡洛")
    elapsed = time.perf_counter() - start

    df = pd.DataFrame(rows, columns=result_columns(model))
    df["error"] = df["error"].fillna("")
    failures = int((df["error"] != "").sum())
    if replications == 1:
        msg = "只有一次重复，标准差相关字段为空"
        warnings.append(msg)
        logger.warning(msg)

    boundary = df["boundary"].fillna(False).astype(bool)
    summary = RunSummary(
        replications=replications, failures=failures, n=n, h_n=h_n,
        summary=summarize(df, model, g1, g2, n, h_n),
        summary_interior=summarize(df[~boundary], model, g1, g2, n, h_n),
        baseline=_baseline(df, model, n, h_n),
        gamma1=g1.tolist(), gamma2=g2.tolist(), elapsed_seconds=elapsed,
        boundary_count=int(boundary.sum()), warnings=warnings)
    logger.info(f"蒙特卡洛完成: 失败 {failures}/{replications}，用时 {elapsed:.1f} 秒")
    return df, summary


def check_failure_rate(summary: RunSummary) -> None:
    """失败比例超过阈值时抛出 RunFailureError"""
    rate = summary.failures / summary.replications if summary.replications else 0.0
    if rate > MAX_FAILURE_RATE:
        raise RunFailureError("失败的重复过多", failure_rate=rate)
