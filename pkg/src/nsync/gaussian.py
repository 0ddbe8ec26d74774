#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
精确高斯结构
组装增量向量的协方差 S_n(σ)，按时间顺序做带状 Cholesky 分解，
提供对数行列式、二次型、精确模拟以及二次型矩公式

作者: NSync Team
创建时间: 2026-10-19
版本: 1.0.0
"""

import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Tuple, Union

import numpy as np
from scipy import linalg, sparse

from .errors import ContractError, DataError, DomainError, NotPositiveDefiniteError
from .model import CoefficientModel, TimeStructure
from .sampling import (OverlapMatrix, SamplingScheme, SeedLike, as_seed_sequence,
                       build_overlap, parse_floats, read_data_lines)

logger = logging.getLogger(__name__)

# 计算 sup_t |ρ_t| 时使用的时间网格点数
RHO_GRID_POINTS = 257
_PIVOT_PATTERN = re.compile(r"(\d+)-th leading minor")


@dataclass(frozen=True)
class IncrementVector:
    """
    堆叠增量 ΔX = (Δ¹X, Δ²X)，前 M1 个元素属于坐标 1
    """
    values: np.ndarray
    scheme: SamplingScheme

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1 or values.size != self.scheme.M:
            raise ContractError(f"增量长度应为 M={self.scheme.M}，实际为 {values.size}")
        object.__setattr__(self, "values", values)

    @property
    def delta1(self) -> np.ndarray:
        return self.values[:self.scheme.M1]

    @property
    def delta2(self) -> np.ndarray:
        return self.values[self.scheme.M1:]

    def locate(self, k: int) -> Tuple[int, int]:
        """堆叠下标 k（1 起始）对应的 (坐标, 坐标内下标)"""
        m1 = self.scheme.M1
        if not (1 <= k <= self.scheme.M):
            raise ContractError(f"下标越界: {k}")
        return (1, k) if k <= m1 else (2, k - m1)


@dataclass(frozen=True)
class CovarianceLayout:
    """
    与 σ 无关的排列信息：按区间右端点（同时刻坐标 1 在前）排序的置换与带宽
    """
    perm: np.ndarray
    inv: np.ndarray
    bandwidth: int
    band_rows: np.ndarray
    band_cols: np.ndarray

    @classmethod
    def from_overlap(cls, g: OverlapMatrix) -> "CovarianceLayout":
        scheme = g.scheme
        right = np.concatenate((scheme.grid1[1:], scheme.grid2[1:]))
        coord = np.concatenate((np.zeros(scheme.M1, dtype=int), np.ones(scheme.M2, dtype=int)))
        perm = np.lexsort((coord, right))
        inv = np.empty_like(perm)
        inv[perm] = np.arange(perm.size)
        p = inv[g.rows]
        q = inv[scheme.M1 + g.cols]
        band_rows = np.abs(p - q)
        band_cols = np.minimum(p, q)
        bandwidth = int(band_rows.max()) if band_rows.size else 0
        return cls(perm=perm, inv=inv, bandwidth=bandwidth,
                   band_rows=band_rows, band_cols=band_cols)


@dataclass(eq=False)
class CovarianceOperator:
    """
    S_n(σ) 的稀疏表示与带状 Cholesky 因子

    对角块为 Σ̃_i^l，非对角元只存储有重叠的 (i, j)，值为 Σ̃_{i,j}^{1,2}。
    """
    overlap: OverlapMatrix
    layout: CovarianceLayout
    sigma: np.ndarray
    diag1: np.ndarray
    diag2: np.ndarray
    off: np.ndarray
    rho_pairs: np.ndarray
    rho_local: float
    _chol: Optional[np.ndarray] = field(default=None, repr=False)
    _csr: Optional[sparse.csr_matrix] = field(default=None, repr=False)

    @property
    def scheme(self) -> SamplingScheme:
        return self.overlap.scheme

    @property
    def M(self) -> int:
        return self.diag1.size + self.diag2.size

    @property
    def diagonal(self) -> np.ndarray:
        return np.concatenate((self.diag1, self.diag2))

    @property
    def rho_bar(self) -> float:
        pairs = float(np.abs(self.rho_pairs).max()) if self.rho_pairs.size else 0.0
        return max(pairs, self.rho_local)

    @property
    def factorized(self) -> bool:
        return self._chol is not None

    def band_matrix(self) -> np.ndarray:
        """下三角带状存储 ab[i-j, j] = S[i, j]（时间顺序）"""
        lay = self.layout
        ab = np.zeros((lay.bandwidth + 1, self.M))
        ab[0, lay.inv] = self.diagonal
        ab[lay.band_rows, lay.band_cols] = self.off
        return ab

    def factorize(self) -> "CovarianceOperator":
        """
        带状 Cholesky 分解

        Raises:
            NotPositiveDefiniteError: 分解失败，pivot 为堆叠顺序下的下标（0 起始）
        """
        if self._chol is not None:
            return self
        try:
            self._chol = linalg.cholesky_banded(self.band_matrix(), lower=True)
        except linalg.LinAlgError as e:
            match = _PIVOT_PATTERN.search(str(e))
            pivot = int(self.layout.perm[int(match.group(1)) - 1]) if match else -1
            raise NotPositiveDefiniteError(f"S_n(σ={self.sigma.tolist()}) 不是正定矩阵", pivot=pivot)
        return self

    def _factor(self) -> np.ndarray:
        if self._chol is None:
            self.factorize()
        assert self._chol is not None
        return self._chol

    def _check_length(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape[0] != self.M:
            raise ContractError(f"向量长度应为 M={self.M}，实际为 {v.shape[0]}")
        return v

    def logdet(self) -> float:
        return float(2.0 * np.sum(np.log(self._factor()[0])))

    def whiten(self, v: Any) -> np.ndarray:
        """L^{-1}·P·v，其中 S = P^T L L^T P"""
        v = self._check_length(v)
        chol = self._factor()
        return linalg.solve_banded((self.layout.bandwidth, 0), chol, v[self.layout.perm])

    def quad_form(self, v: Any) -> float:
        """v^T S_n^{-1} v"""
        z = self.whiten(v)
        return float(np.sum(z * z, axis=0))

    def solve(self, v: Any) -> np.ndarray:
        """S_n^{-1} v，v 可以是向量或按列堆叠的矩阵"""
        v = self._check_length(v)
        x = linalg.cho_solve_banded((self._factor(), True), v[self.layout.perm])
        out = np.empty_like(x)
        out[self.layout.perm] = x
        return out

    def lower_multiply(self, z: np.ndarray) -> np.ndarray:
        """返回与 L·z 同分布的堆叠顺序向量，满足 Cov = S_n"""
        z = self._check_length(z)
        chol = self._factor()
        m = self.M
        y = chol[0] * z
        for d in range(1, chol.shape[0]):
            y[d:] += chol[d, :m - d] * z[:m - d]
        out = np.empty_like(y)
        out[self.layout.perm] = y
        return out

    def to_sparse(self) -> sparse.csr_matrix:
        """堆叠顺序下的对称稀疏矩阵"""
        if self._csr is None:
            m1 = self.diag1.size
            g = self.overlap
            idx = np.arange(self.M)
            rows = np.concatenate((idx, g.rows, m1 + g.cols))
            cols = np.concatenate((idx, m1 + g.cols, g.rows))
            vals = np.concatenate((self.diagonal, self.off, self.off))
            self._csr = sparse.csr_matrix((vals, (rows, cols)), shape=(self.M, self.M))
        return self._csr

    def matvec(self, x: Any) -> np.ndarray:
        return self.to_sparse() @ self._check_length(x)

    def normalized_cross(self) -> sparse.csr_matrix:
        """G̃ = D̃_1^{-1/2} Σ̃^{12} D̃_2^{-1/2}"""
        g = self.overlap
        vals = self.off / np.sqrt(self.diag1[g.rows] * self.diag2[g.cols])
        return sparse.csr_matrix((vals, (g.rows, g.cols)), shape=(g.M1, g.M2))


def _local_rho_sup(model: CoefficientModel, sigma: np.ndarray, t_end: float) -> float:
    if model.structure == TimeStructure.CONSTANT:
        ts = np.zeros(1)
    elif model.structure == TimeStructure.PERIODIC and model.period:
        ts = np.linspace(0.0, min(model.period, t_end), RHO_GRID_POINTS)
    else:
        ts = np.linspace(0.0, t_end, RHO_GRID_POINTS)
    return float(np.abs(model.correlation_values(ts, sigma)).max())


def assemble(scheme: SamplingScheme, g: Optional[OverlapMatrix], model: CoefficientModel,
             sigma: Any, layout: Optional[CovarianceLayout] = None,
             factorize: bool = True, check: bool = True) -> CovarianceOperator:
    """
    组装 S_n(σ)

    Args:
        scheme: 观测方案
        g: 重叠矩阵（None 时现场构造）
        model: 系数模型
        sigma: 扩散参数
        layout: 预先计算的排列（可在同一方案的多次组装间复用）
        factorize: 是否立即分解
        check: 是否检查 σ 的盒约束

    Returns:
        CovarianceOperator

    Raises:
        DomainError: σ 超出 Θ1
        NotPositiveDefiniteError: factorize=True 且分解失败
    """
    sigma = model.params.check_sigma(sigma) if check else np.asarray(sigma, dtype=float)
    if g is None:
        g = build_overlap(scheme)
    if layout is None:
        layout = CovarianceLayout.from_overlap(g)
    a1, b1 = scheme.intervals(1)
    a2, b2 = scheme.intervals(2)
    diag1 = model.sigma_component_integrals(a1, b1, sigma, "11")
    diag2 = model.sigma_component_integrals(a2, b2, sigma, "22")
    off = model.sigma_component_integrals(g.lo, g.hi, sigma, "12")
    g_tilde = off / np.sqrt(diag1[g.rows] * diag2[g.cols])
    rho_pairs = g_tilde / g.values
    op = CovarianceOperator(overlap=g, layout=layout, sigma=sigma, diag1=diag1, diag2=diag2,
                            off=off, rho_pairs=rho_pairs,
                            rho_local=_local_rho_sup(model, sigma, scheme.T_n))
    if factorize:
        op.factorize()
    return op


def rho_bar(model: CoefficientModel, scheme: SamplingScheme, sigma: Optional[Any] = None,
            g: Optional[OverlapMatrix] = None, grid_points: int = 8) -> float:
    """
    ρ̄ = max_{i,j}|ρ_ij| ∨ sup_t|ρ_t|

    sigma 为 None 时在 Θ1 盒上取每维 grid_points 个点的粗网格近似上确界。
    """
    if g is None:
        g = build_overlap(scheme)
    layout = CovarianceLayout.from_overlap(g)
    if sigma is not None:
        return assemble(scheme, g, model, sigma, layout, factorize=False).rho_bar
    axes = [np.linspace(lo, hi, grid_points) for lo, hi in model.params.sigma_bounds]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, model.params.d1)
    return max(assemble(scheme, g, model, s, layout, factorize=False).rho_bar for s in grid)


def logdet(op: CovarianceOperator) -> float:
    """log det S_n(σ) = 2·Σ log diag(L)"""
    return op.logdet()


def logdet_series_check(op: CovarianceOperator, p_max: int) -> Tuple[float, float]:
    """
    级数形式的对数行列式，仅用于交叉验证

    log det S_n = Σ log Σ̃_i − Σ_p tr((G̃G̃^T)^p)/p

    Returns:
        (截断值, 截断误差上界 M1·ρ̄^{2(P+1)}/((P+1)(1−ρ̄²)))

    Raises:
        DomainError: ρ̄ ≥ 1
    """
    rb = op.rho_bar
    if rb >= 1.0:
        raise DomainError(f"ρ̄={rb:.6f} ≥ 1，级数不收敛")
    if p_max < 1:
        raise ContractError(f"p_max 必须 ≥ 1: {p_max}")
    value = float(np.sum(np.log(op.diag1)) + np.sum(np.log(op.diag2)))
    gt = op.normalized_cross()
    q = (gt @ gt.T).tocsr()
    power = q
    for p in range(1, p_max + 1):
        if p > 1:
            power = (power @ q).tocsr()
        value -= float(power.diagonal().sum()) / p
    m1 = op.diag1.size
    bound = m1 * rb ** (2 * (p_max + 1)) / ((p_max + 1) * (1.0 - rb * rb))
    return value, bound


def neumann_solve(op: CovarianceOperator, v: Any, p_max: int) -> Tuple[np.ndarray, float]:
    """
    Neumann 展开近似 S_n^{-1}v，仅作验证

    S_n = D̃^{1/2}(I + N)D̃^{1/2}，N 为非对角块，(I + N)^{-1} = Σ_k (−N)^k。

    Returns:
        (近似解, 误差上界 ‖D̃^{-1/2}‖²·|v|·ρ̄^{P+1}/(1−ρ̄))
    """
    rb = op.rho_bar
    if rb >= 1.0:
        raise DomainError(f"ρ̄={rb:.6f} ≥ 1，Neumann 级数不收敛")
    v = op._check_length(v)
    d = op.diagonal
    m1 = op.diag1.size
    gt = op.normalized_cross()
    w = v / np.sqrt(d)
    term = w.copy()
    total = w.copy()
    for _ in range(p_max):
        top = gt @ term[m1:]
        bottom = gt.T @ term[:m1]
        term = -np.concatenate((top, bottom))
        total += term
    bound = float(np.linalg.norm(v)) / float(d.min()) * rb ** (p_max + 1) / (1.0 - rb)
    return total / np.sqrt(d), bound


def quad_form(op: CovarianceOperator, v: Any) -> float:
    """v^T S_n^{-1} v"""
    return op.quad_form(v)


def log_density(op: CovarianceOperator, x: Any, mean: Optional[Any] = None) -> float:
    """N(mean, S_n) 的精确对数密度"""
    x = op._check_length(x)
    r = x if mean is None else x - op._check_length(mean)
    return -0.5 * op.quad_form(r) - 0.5 * op.logdet() - 0.5 * op.M * math.log(2.0 * math.pi)


def drift_vector(scheme: SamplingScheme, model: CoefficientModel, theta: Any,
                 check: bool = True) -> np.ndarray:
    """堆叠的 ΔV(θ)"""
    theta = model.params.check_theta(theta) if check else np.asarray(theta, dtype=float)
    a1, b1 = scheme.intervals(1)
    a2, b2 = scheme.intervals(2)
    inc1 = model.drift_increments(a1, b1, theta)[:, 0]
    inc2 = model.drift_increments(a2, b2, theta)[:, 1]
    return np.concatenate((inc1, inc2))


def simulate_increments(scheme: SamplingScheme, model: CoefficientModel, sigma0: Any,
                        theta0: Any, seed: SeedLike = None,
                        op: Optional[CovarianceOperator] = None) -> IncrementVector:
    """
    精确模拟非同步增量：ΔX = ΔV(θ0) + L·Z

    系数是确定性函数，增量精确服从 N(ΔV(θ0), S_n(σ0))，不存在离散化误差。
    """
    if op is None:
        op = assemble(scheme, None, model, sigma0)
    rng = np.random.default_rng(as_seed_sequence(seed))
    z = rng.standard_normal(scheme.M)
    values = drift_vector(scheme, model, theta0) + op.lower_multiply(z)
    return IncrementVector(values, scheme)


def gaussian_quadform_moments(a: Any, v: Any, order: int) -> float:
    """
    X ~ N(0, V) 时 E[(X^T A X)^k]，k ∈ {2, 3, 4}

    记 t_k = tr((AV)^k)，则
      k=2: t1² + 2 t2
      k=3: t1³ + 6 t1 t2 + 8 t3
      k=4: t1⁴ + 12 t1² t2 + 12 t2² + 32 t1 t3 + 48 t4

    公式要求 A 对称；X^T A X 只依赖 (A + A^T)/2，一般方阵先对称化。
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    v = np.atleast_2d(np.asarray(v, dtype=float))
    if a.shape != v.shape or a.shape[0] != a.shape[1]:
        raise ContractError(f"A 与 V 必须是同阶方阵: {a.shape} vs {v.shape}")
    if order not in (2, 3, 4):
        raise ContractError(f"不支持的阶数: {order}")
    a = 0.5 * (a + a.T)
    av = a @ v
    traces = []
    power = np.eye(av.shape[0])
    for _ in range(4):
        power = power @ av
        traces.append(float(np.trace(power)))
    t1, t2, t3, t4 = traces
    if order == 2:
        return t1 ** 2 + 2.0 * t2
    if order == 3:
        return t1 ** 3 + 6.0 * t1 * t2 + 8.0 * t3
    return t1 ** 4 + 12.0 * t1 ** 2 * t2 + 12.0 * t2 ** 2 + 32.0 * t1 * t3 + 48.0 * t4


# ----------------------------------------------------------------------
# 文本格式
# ----------------------------------------------------------------------
def dump_increments(dx: IncrementVector, path: Union[str, Path]) -> None:
    """首行 "M1 M2"，随后两行分别为 Δ¹X 与 Δ²X"""
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"{dx.scheme.M1} {dx.scheme.M2}\n")
        f.write(" ".join(format(float(x), ".17g") for x in dx.delta1) + "\n")
        f.write(" ".join(format(float(x), ".17g") for x in dx.delta2) + "\n")


def load_increments(path: Union[str, Path], scheme: SamplingScheme) -> IncrementVector:
    """读取增量文件并与方案核对维度"""
    lines = read_data_lines(path, 3)
    header = lines[0].split()
    try:
        m1, m2 = int(header[0]), int(header[1])
    except (ValueError, IndexError):
        raise DataError("首行应为 'M1 M2'", line=1, path=str(path))
    if (m1, m2) != (scheme.M1, scheme.M2):
        raise DataError(f"维度 ({m1}, {m2}) 与方案 ({scheme.M1}, {scheme.M2}) 不符",
                        line=1, path=str(path))
    d1 = parse_floats(lines[1], 2, str(path))
    d2 = parse_floats(lines[2], 3, str(path))
    for line_no, vals, expected in ((2, d1, m1), (3, d2, m2)):
        if vals.size != expected:
            raise DataError(f"应有 {expected} 个数值，实际 {vals.size} 个", line=line_no, path=str(path))
        if not np.all(np.isfinite(vals)):
            raise DataError("存在非有限数值", line=line_no, path=str(path))
    return IncrementVector(np.concatenate((d1, d2)), scheme)


def dump_matrix(op: CovarianceOperator, path: Union[str, Path]) -> None:
    """坐标列表格式：首行 "M1 M2 σ..."，之后每行 "row col value"（0 起始，含上下三角）"""
    coo = op.to_sparse().tocoo()
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w", encoding="utf-8") as f:
        sigma = " ".join(format(float(s), ".17g") for s in op.sigma)
        f.write(f"{op.diag1.size} {op.diag2.size} {sigma}\n")
        for k in order:
            f.write(f"{coo.row[k]} {coo.col[k]} {format(float(coo.data[k]), '.17g')}\n")
    logger.info(f"协方差矩阵已写出: {path} (nnz={coo.nnz})")
