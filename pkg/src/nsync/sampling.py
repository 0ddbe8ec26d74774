#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
观测方案
生成非同步观测网格，构造重叠矩阵 G，计算窗口化的谱泛函，
并用蒙特卡洛估计极限常数 a_p 与 f_p

作者: NSync Team
创建时间: 2026-10-19
版本: 1.0.0
"""

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import sparse

from .errors import ConfigError, DataError, DomainError

logger = logging.getLogger(__name__)

SeedLike = Union[None, int, np.random.SeedSequence]

# 泊松网格没有内部点时的最大重试次数
MAX_POISSON_RETRIES = 20
# 级数截断：A 及其导数的几何尾部上界小于 P_MAX_TOL，且不少于 P_MAX_FLOOR
P_MAX_FLOOR = 40
P_MAX_TOL = 1e-12
# 区间右端点归窗时的容差（以 h_n 为单位）
WINDOW_TOL = 1e-9


def as_seed_sequence(seed: SeedLike) -> np.random.SeedSequence:
    """把整数或 None 统一转换为 SeedSequence"""
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def choose_p_max(rho_max: float, floor: int = P_MAX_FLOOR, tol: float = P_MAX_TOL) -> int:
    """
    不小于 floor 的最小 p，使 a_p ≤ 1 时 A 与 ∂A 的截断尾部
    ρ^{2(p+1)}/(1−ρ²) 与 2(p+1)ρ^{2p+1}/(1−ρ²)² 都小于 tol
    """
    if not (0.0 <= rho_max < 1.0):
        raise DomainError(f"rho_max 须位于 [0, 1): {rho_max}")
    if rho_max == 0.0:
        return floor
    x = rho_max * rho_max
    p = floor
    while max(x ** (p + 1) / (1.0 - x),
              2.0 * (p + 1) * rho_max ** (2 * p + 1) / (1.0 - x) ** 2) >= tol:
        p += 1
    return p


@dataclass(frozen=True)
class SamplingScheme:
    """
    一对严格递增的观测网格，均从 0 开始、到 T_n = n·h_n 结束

    Attributes:
        grid1, grid2: 两个坐标的观测时刻
        n: 规模参数
        h_n: 时间尺度
        generator: 生成器名称
        retries: 泊松生成器的重试次数
    """
    grid1: np.ndarray
    grid2: np.ndarray
    n: int
    h_n: float
    generator: str = "custom"
    retries: int = 0

    def __post_init__(self) -> None:
        if self.n < 1:
            raise DomainError(f"n 必须为正整数: {self.n}")
        if not self.h_n > 0:
            raise DomainError(f"h_n 必须为正: {self.h_n}")
        t_end = self.n * self.h_n
        for label in ("grid1", "grid2"):
            grid = np.asarray(getattr(self, label), dtype=float)
            if grid.ndim != 1 or grid.size < 2:
                raise DomainError(f"{label} 至少需要两个时刻")
            if np.any(np.diff(grid) <= 0):
                bad = int(np.argmax(np.diff(grid) <= 0)) + 1
                raise DomainError(f"{label} 不是严格递增的 (位置 {bad})")
            if grid[0] != 0.0:
                raise DomainError(f"{label} 必须从 0 开始")
            if abs(grid[-1] - t_end) > 1e-9 * max(1.0, t_end):
                raise DomainError(f"{label} 必须以 T_n={t_end} 结束，实际为 {grid[-1]}")
            grid = grid.copy()
            grid[-1] = t_end
            grid.setflags(write=False)
            object.__setattr__(self, label, grid)

    @property
    def T_n(self) -> float:
        return self.n * self.h_n

    @property
    def M1(self) -> int:
        return self.grid1.size - 1

    @property
    def M2(self) -> int:
        return self.grid2.size - 1

    @property
    def M(self) -> int:
        return self.M1 + self.M2

    def lengths(self, coordinate: int) -> np.ndarray:
        grid = self.grid1 if coordinate == 1 else self.grid2
        return np.diff(grid)

    def intervals(self, coordinate: int) -> Tuple[np.ndarray, np.ndarray]:
        """返回 (左端点, 右端点)"""
        grid = self.grid1 if coordinate == 1 else self.grid2
        return grid[:-1], grid[1:]

    def summary(self) -> Dict[str, Any]:
        return {
            "generator": self.generator,
            "n": self.n,
            "h_n": self.h_n,
            "T_n": self.T_n,
            "M1": self.M1,
            "M2": self.M2,
            "r_n": max_gap(self),
            "retries": self.retries,
        }


@dataclass(eq=False)
class OverlapMatrix:
    """
    稀疏重叠矩阵 G

    rows/cols 为非零元位置（0 起始），lo/hi 为重叠区间端点，
    raw 为 |I_i^1 ∩ I_j^2|，values 为归一化后的 [G]_ij。
    """
    scheme: SamplingScheme
    rows: np.ndarray
    cols: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    raw: np.ndarray
    values: np.ndarray
    len1: np.ndarray
    len2: np.ndarray
    _csr: Optional[sparse.csr_matrix] = field(default=None, repr=False)

    @property
    def M1(self) -> int:
        return self.len1.size

    @property
    def M2(self) -> int:
        return self.len2.size

    @property
    def nnz(self) -> int:
        return self.values.size

    @property
    def sqrt1(self) -> np.ndarray:
        """向量 𝕴_1"""
        return np.sqrt(self.len1)

    @property
    def sqrt2(self) -> np.ndarray:
        """向量 𝕴_2"""
        return np.sqrt(self.len2)

    @property
    def csr(self) -> sparse.csr_matrix:
        if self._csr is None:
            self._csr = sparse.csr_matrix((self.values, (self.rows, self.cols)),
                                          shape=(self.M1, self.M2))
        return self._csr

    def row_overlap_sums(self) -> np.ndarray:
        return np.bincount(self.rows, weights=self.raw, minlength=self.M1)

    def col_overlap_sums(self) -> np.ndarray:
        return np.bincount(self.cols, weights=self.raw, minlength=self.M2)

    def operator_norm(self, n_iter: int = 500, tol: float = 1e-13) -> float:
        """幂迭代估计 ‖G‖ = λ_max(GG^T)^{1/2}"""
        g = self.csr
        v = np.random.default_rng(0).random(self.M1) + 0.1
        v /= np.linalg.norm(v)
        lam = 0.0
        for _ in range(n_iter):
            w = g @ (g.T @ v)
            new_lam = float(np.linalg.norm(w))
            if new_lam == 0.0:
                return 0.0
            v = w / new_lam
            if abs(new_lam - lam) <= tol * new_lam:
                lam = new_lam
                break
            lam = new_lam
        return math.sqrt(lam)


def build_overlap(scheme: SamplingScheme) -> OverlapMatrix:
    """
    构造重叠矩阵 G

    两个网格的合并断点把 (0, T_n] 切成若干段，每一段恰好对应一对
    有正长度重叠的区间 (I_i^1, I_j^2)，因此非零元与合并网格的段一一对应。

    Args:
        scheme: 观测方案

    Returns:
        OverlapMatrix
    """
    g1, g2 = scheme.grid1, scheme.grid2
    points = np.concatenate((g1, g2))
    # 两段有序序列的稳定排序 (timsort) 即线性归并
    order = np.argsort(points, kind="stable")
    merged = points[order]
    from1 = order < g1.size
    count1 = np.cumsum(from1)
    count2 = np.cumsum(~from1)
    # 相同断点只保留最后一次出现，此时两个计数都已包含该点
    last = np.append(merged[1:] > merged[:-1], True)
    merged, count1, count2 = merged[last], count1[last], count2[last]
    lo, hi = merged[:-1], merged[1:]
    rows = count1[:-1] - 1
    cols = count2[:-1] - 1
    raw = hi - lo
    len1 = np.diff(g1)
    len2 = np.diff(g2)
    values = raw / np.sqrt(len1[rows] * len2[cols])
    # 浮点舍入可能让单元值略超过 1
    np.minimum(values, 1.0, out=values)
    logger.debug(f"重叠矩阵构造完成: M1={len1.size}, M2={len2.size}, nnz={values.size}")
    return OverlapMatrix(scheme=scheme, rows=rows, cols=cols, lo=lo, hi=hi, raw=raw,
                         values=values, len1=len1, len2=len2)


def max_gap(scheme: SamplingScheme) -> float:
    """r_n = 两个网格中最长的观测间隔"""
    return float(max(np.diff(scheme.grid1).max(), np.diff(scheme.grid2).max()))


# ----------------------------------------------------------------------
# 生成器
# ----------------------------------------------------------------------
def _poisson_grid(rng: np.random.Generator, lam: float, n: int, h_n: float) -> np.ndarray:
    count = rng.poisson(lam * n)
    times = np.sort(rng.uniform(0.0, float(n), count)) * h_n
    t_end = n * h_n
    times = np.unique(times[(times > 0.0) & (times < t_end)])
    return np.concatenate(([0.0], times, [t_end]))


def generate_poisson(lam1: float, lam2: float, n: int, h_n: float,
                     seed: SeedLike = None) -> SamplingScheme:
    """
    两个独立齐次泊松过程的跳跃时刻，时间按 h_n 缩放

    Args:
        lam1, lam2: 强度
        n: 规模参数，未缩放的时间区间为 [0, n]
        h_n: 时间尺度
        seed: 随机种子

    Returns:
        SamplingScheme，两端点 0 与 T_n 已补上

    Raises:
        DomainError: 强度非正或多次重试仍没有内部点
    """
    if lam1 <= 0 or lam2 <= 0:
        raise DomainError(f"泊松强度必须为正: λ1={lam1}, λ2={lam2}")
    if n < 1 or h_n <= 0:
        raise DomainError(f"需要 n ≥ 1 且 h_n > 0: n={n}, h_n={h_n}")
    ss = as_seed_sequence(seed)
    stream = ss
    for attempt in range(MAX_POISSON_RETRIES + 1):
        rng = np.random.default_rng(stream)
        grid1 = _poisson_grid(rng, lam1, n, h_n)
        grid2 = _poisson_grid(rng, lam2, n, h_n)
        if grid1.size > 2 and grid2.size > 2:
            if attempt:
                logger.warning(f"泊松网格在第 {attempt} 次重试后才得到内部点")
            return SamplingScheme(grid1, grid2, n, h_n, generator="poisson", retries=attempt)
        stream = ss.spawn(1)[0]
    raise DomainError(f"泊松网格重试 {MAX_POISSON_RETRIES} 次仍没有内部点")


def generate_equidistant(n: int, h_n: float, offset2: float = 0.0) -> SamplingScheme:
    """
    等距网格；offset2 > 0 时第二个网格平移 offset2·h_n，端点截断到 [0, T_n]
    """
    if not (0.0 <= offset2 < 1.0):
        raise DomainError(f"offset2 须位于 [0, 1): {offset2}")
    if n < 1 or h_n <= 0:
        raise DomainError(f"需要 n ≥ 1 且 h_n > 0: n={n}, h_n={h_n}")
    t_end = n * h_n
    grid1 = np.arange(n + 1, dtype=float) * h_n
    grid1[-1] = t_end
    if offset2 == 0.0:
        return SamplingScheme(grid1, grid1.copy(), n, h_n, generator="equidistant")
    inner = (np.arange(n, dtype=float) + offset2) * h_n
    grid2 = np.concatenate(([0.0], inner[(inner > 0) & (inner < t_end)], [t_end]))
    return SamplingScheme(grid1, grid2, n, h_n, generator="equidistant")


def generate_shifted(n: int, h_n: float, offset2: float = 0.5, jitter: float = 0.0,
                     seed: SeedLike = None) -> SamplingScheme:
    """平移等距网格，并对第二个网格的内部点加 ±jitter·h_n/2 的均匀扰动"""
    if not (0.0 <= jitter < 1.0):
        raise DomainError(f"jitter 须位于 [0, 1): {jitter}")
    base = generate_equidistant(n, h_n, offset2)
    if jitter == 0.0:
        return SamplingScheme(base.grid1, base.grid2, n, h_n, generator="shifted")
    rng = np.random.default_rng(as_seed_sequence(seed))
    inner = base.grid2[1:-1] + (rng.random(base.M2 - 1) - 0.5) * jitter * h_n
    inner = np.unique(inner[(inner > 0) & (inner < base.T_n)])
    grid2 = np.concatenate(([0.0], inner, [base.T_n]))
    return SamplingScheme(base.grid1, grid2, n, h_n, generator="shifted")


@dataclass(frozen=True)
class SchemeGenerator:
    """
    观测方案生成器的配置

    kind 取 "poisson" | "equidistant" | "shifted"
    """
    kind: str = "poisson"
    lam1: float = 1.0
    lam2: float = 1.0
    offset2: float = 0.0
    jitter: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("poisson", "equidistant", "shifted"):
            raise ConfigError(f"未知的生成器: {self.kind}", field="sampling.generator")
        if self.kind == "poisson" and (self.lam1 <= 0 or self.lam2 <= 0):
            raise ConfigError("泊松强度必须为正", field="sampling.lambda1")

    @property
    def deterministic(self) -> bool:
        return self.kind == "equidistant" or (self.kind == "shifted" and self.jitter == 0.0)

    def draw(self, n: int, h_n: float, seed: SeedLike = None) -> SamplingScheme:
        if self.kind == "poisson":
            return generate_poisson(self.lam1, self.lam2, n, h_n, seed)
        if self.kind == "equidistant":
            return generate_equidistant(n, h_n, self.offset2)
        return generate_shifted(n, h_n, self.offset2, self.jitter, seed)

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind, "lam1": self.lam1, "lam2": self.lam2,
                "offset2": self.offset2, "jitter": self.jitter}


# ----------------------------------------------------------------------
# 窗口与谱泛函
# ----------------------------------------------------------------------
def unit_windows(t_end: float, width: float = 1.0) -> np.ndarray:
    """等宽窗口的端点 s_0=0 < s_1 < ... < s_K = T_n，最后一个窗口可能更短"""
    if width <= 0:
        raise DomainError(f"窗口宽度必须为正: {width}")
    k = int(math.ceil(t_end / width - 1e-12))
    edges = np.arange(k + 1, dtype=float) * width
    edges[-1] = t_end
    return edges


def random_partition(t_end: float, seed: SeedLike = None) -> np.ndarray:
    """间隔独立取自 (0, 1] 上均匀分布的随机划分"""
    rng = np.random.default_rng(as_seed_sequence(seed))
    edges = [0.0]
    while edges[-1] < t_end:
        edges.append(edges[-1] + (1.0 - rng.random()))
    out = np.asarray(edges)
    out[-1] = t_end
    return out


def window_index(right_endpoints: np.ndarray, edges: np.ndarray, h_n: float) -> np.ndarray:
    """按右端点 sup I ∈ (s_{k-1}, s_k] 归窗，返回 0 起始的窗口编号"""
    idx = np.searchsorted(edges, right_endpoints - WINDOW_TOL * h_n, side="left") - 1
    return np.clip(idx, 0, edges.size - 2)


def _check_windows(g: OverlapMatrix, p_max: int, edges: np.ndarray) -> None:
    if p_max < 1:
        raise DomainError(f"p_max 必须 ≥ 1: {p_max}")
    t_end = g.scheme.T_n
    if edges[0] != 0.0 or abs(edges[-1] - t_end) > 1e-9 * max(1.0, t_end) or np.any(np.diff(edges) <= 0):
        raise DomainError("窗口划分必须严格递增且覆盖 (0, T_n]")


def trace_powers(g: OverlapMatrix, p_max: int, edges: np.ndarray) -> np.ndarray:
    """
    每个窗口上 h_n·tr(E_k (GG^T)^p)，p = 0..p_max

    Returns:
        形如 (K, p_max+1) 的数组；第 0 列为 h_n·M_{1,k}
    """
    _check_windows(g, p_max, edges)
    h_n = g.scheme.h_n
    k = edges.size - 1
    win = window_index(g.scheme.grid1[1:], edges, h_n)
    out = np.zeros((k, p_max + 1))
    out[:, 0] = h_n * np.bincount(win, minlength=k)
    gmat = g.csr
    ggt = (gmat @ gmat.T).tocsr()
    power = ggt
    for p in range(1, p_max + 1):
        if p > 1:
            power = (power @ ggt).tocsr()
        out[:, p] = h_n * np.bincount(win, weights=power.diagonal(), minlength=k)
    return out


def weighted_functionals(g: OverlapMatrix, p_max: int, edges: np.ndarray) -> np.ndarray:
    """
    每个窗口上的三个加权形式

    (𝕴_1^T E_k (GG^T)^p 𝕴_1, 𝕴_1^T E_k (GG^T)^p G 𝕴_2, 𝕴_2^T E_k (G^TG)^p 𝕴_2)

    Returns:
        形如 (K, p_max+1, 3) 的数组
    """
    _check_windows(g, p_max, edges)
    h_n = g.scheme.h_n
    k = edges.size - 1
    win1 = window_index(g.scheme.grid1[1:], edges, h_n)
    win2 = window_index(g.scheme.grid2[1:], edges, h_n)
    gmat = g.csr
    gt = gmat.T.tocsr()
    s1, s2 = g.sqrt1, g.sqrt2
    v11 = s1.copy()
    v12 = gmat @ s2
    v22 = s2.copy()
    out = np.zeros((k, p_max + 1, 3))
    for p in range(p_max + 1):
        if p:
            v11 = gmat @ (gt @ v11)
            v12 = gmat @ (gt @ v12)
            v22 = gt @ (gmat @ v22)
        out[:, p, 0] = np.bincount(win1, weights=s1 * v11, minlength=k)
        out[:, p, 1] = np.bincount(win1, weights=s1 * v12, minlength=k)
        out[:, p, 2] = np.bincount(win2, weights=s2 * v22, minlength=k)
    return out


def sampling_diagnostics(scheme: SamplingScheme, q_list: Sequence[int] = (2, 4),
                         u: float = 0.5) -> Dict[str, float]:
    """
    计数过程的经验诊断量

    对每个坐标给出长度 h_n 的相邻窗口内观测数的 q 阶矩，
    以及长度 u·h_n 的窗口为空的频率。
    """
    h_n = scheme.h_n
    out: Dict[str, float] = {}
    for l, grid in ((1, scheme.grid1), (2, scheme.grid2)):
        points = grid[1:-1]
        edges = np.arange(0.0, scheme.T_n + 0.5 * h_n, h_n)
        counts = np.histogram(points, bins=edges)[0] if edges.size > 1 else np.zeros(1)
        for q in q_list:
            out[f"count_moment_q{q}_{l}"] = float(np.mean(counts.astype(float) ** q))
        fine = np.arange(0.0, scheme.T_n + 0.5 * u * h_n, u * h_n)
        fine_counts = np.histogram(points, bins=fine)[0] if fine.size > 1 else np.zeros(1)
        out[f"empty_frequency_{l}"] = float(np.mean(fine_counts == 0))
    return out


# ----------------------------------------------------------------------
# 极限常数
# ----------------------------------------------------------------------
@dataclass
class SchemeConstants:
    """
    极限常数 a_0^l, a_p (p=1..p_max), f_p^{11}, f_p^{12}, f_p^{22} (p=0..p_max)
    以及各自的蒙特卡洛标准误
    """
    a0: np.ndarray
    a: np.ndarray
    f11: np.ndarray
    f12: np.ndarray
    f22: np.ndarray
    a0_se: np.ndarray
    a_se: np.ndarray
    f11_se: np.ndarray
    f12_se: np.ndarray
    f22_se: np.ndarray
    replications: int = 0
    windows: Dict[str, Any] = field(default_factory=dict)
    diagnostics: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for name in ("a0", "a", "f11", "f12", "f22", "a0_se", "a_se", "f11_se", "f12_se", "f22_se"):
            setattr(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        if self.a0.size != 2 or np.any(self.a0 <= 0):
            raise DomainError(f"a0 必须为两个正数: {self.a0.tolist()}")
        p_max = self.a.size
        if p_max < 1 or any(v.size != p_max + 1 for v in (self.f11, self.f12, self.f22)):
            raise DomainError("a_p 与 f_p 的长度不一致")
        if np.any(self.a < -1e-12) or np.any(self.f11 < -1e-12) or np.any(self.f22 < -1e-12):
            raise DomainError("a_p 与 f_p 必须非负")
        if np.any(np.diff(self.a) > 1e-10 * max(1.0, float(self.a[0]))):
            logger.warning("a_p 估计值不是关于 p 单调不增的")

    @property
    def p_max(self) -> int:
        return self.a.size

    def a_coefficients(self) -> np.ndarray:
        """系数数组 c，c[p] = a_p，c[0] = 0"""
        return np.concatenate(([0.0], self.a))

    def truncated(self, p_max: int) -> "SchemeConstants":
        if p_max > self.p_max:
            raise DomainError(f"无法截断到更高阶: {p_max} > {self.p_max}")
        return SchemeConstants(
            a0=self.a0, a=self.a[:p_max], f11=self.f11[:p_max + 1], f12=self.f12[:p_max + 1],
            f22=self.f22[:p_max + 1], a0_se=self.a0_se, a_se=self.a_se[:p_max],
            f11_se=self.f11_se[:p_max + 1], f12_se=self.f12_se[:p_max + 1],
            f22_se=self.f22_se[:p_max + 1], replications=self.replications,
            windows=dict(self.windows), diagnostics=dict(self.diagnostics))

    @classmethod
    def synchronous(cls, p_max: int = P_MAX_FLOOR) -> "SchemeConstants":
        """同步等距方案的精确常数：a_p = f_p = 1，标准误为 0"""
        ones_a = np.ones(p_max)
        ones_f = np.ones(p_max + 1)
        return cls(a0=np.ones(2), a=ones_a, f11=ones_f, f12=ones_f.copy(), f22=ones_f.copy(),
                   a0_se=np.zeros(2), a_se=np.zeros(p_max), f11_se=np.zeros(p_max + 1),
                   f12_se=np.zeros(p_max + 1), f22_se=np.zeros(p_max + 1),
                   replications=0, windows={"kind": "exact"})

    def to_dict(self) -> Dict[str, Any]:
        return {
            "p_max": self.p_max,
            "replications": self.replications,
            "a0": self.a0.tolist(),
            "a0_se": self.a0_se.tolist(),
            "a": self.a.tolist(),
            "a_se": self.a_se.tolist(),
            "f11": self.f11.tolist(),
            "f11_se": self.f11_se.tolist(),
            "f12": self.f12.tolist(),
            "f12_se": self.f12_se.tolist(),
            "f22": self.f22.tolist(),
            "f22_se": self.f22_se.tolist(),
            "windows": self.windows,
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SchemeConstants":
        try:
            p_max = len(data["a"])
            zeros_a, zeros_f = [0.0] * p_max, [0.0] * (p_max + 1)
            return cls(
                a0=data["a0"], a=data["a"], f11=data["f11"], f12=data["f12"], f22=data["f22"],
                a0_se=data.get("a0_se", [0.0, 0.0]), a_se=data.get("a_se", zeros_a),
                f11_se=data.get("f11_se", zeros_f), f12_se=data.get("f12_se", zeros_f),
                f22_se=data.get("f22_se", zeros_f),
                replications=int(data.get("replications", 0)),
                windows=dict(data.get("windows", {})),
                diagnostics=dict(data.get("diagnostics", {})))
        except KeyError as e:
            raise DataError(f"常数文件缺少字段 {e}")

    def save(self, path: Union[str, Path]) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, ensure_ascii=False, indent=2)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "SchemeConstants":
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except json.JSONDecodeError as e:
            raise DataError(f"常数文件不是合法 JSON: {e.msg}", line=e.lineno, path=str(path))
        except OSError as e:
            raise DataError(f"无法读取常数文件: {e}", path=str(path))
        return cls.from_dict(data)


def _constants_replication(task: Tuple[SchemeGenerator, int, float, int, float, str,
                                       np.random.SeedSequence]) -> Dict[str, np.ndarray]:
    """单次重复：生成一个方案并返回内部窗口上的单位时间常数"""
    generator, n, h_n, p_max, width, partition, ss = task
    scheme_ss, partition_ss = ss.spawn(2)
    scheme = generator.draw(n, h_n, scheme_ss)
    g = build_overlap(scheme)
    if partition == "random":
        edges = random_partition(scheme.T_n, partition_ss)
    else:
        edges = unit_windows(scheme.T_n, width)
    k = edges.size - 1
    if k < 3:
        raise ConfigError("时间范围太短，去掉两端窗口后没有剩余窗口", field="sampling.n")

    tp = trace_powers(g, p_max, edges)
    wf = weighted_functionals(g, p_max, edges)
    win2 = window_index(scheme.grid2[1:], edges, h_n)
    count2 = np.bincount(win2, minlength=k)

    interior = slice(1, k - 1)
    length = edges[k - 1] - edges[1]
    a0 = np.array([tp[interior, 0].sum(), h_n * count2[interior].sum()]) / length
    a = tp[interior, 1:].sum(axis=0) / length
    f = wf[interior].sum(axis=0) / length
    return {"a0": a0, "a": a, "f": f, "diag": sampling_diagnostics(scheme)}


def estimate_constants(generator: SchemeGenerator, replications: int, p_max: int,
                       n: int, h_n: float, window_width: float = 1.0,
                       partition: str = "unit", seed: SeedLike = 0,
                       workers: int = 1, show_progress: bool = False) -> SchemeConstants:
    """
    蒙特卡洛估计极限常数

    每次重复独立生成一个方案，在去掉首尾各一个窗口后，把窗口化的迹与加权形式
    之和除以剩余长度，得到单位时间常数；最后对 R 次重复取平均并给出标准误。

    Args:
        generator: 观测方案生成器
        replications: 重复次数 R（至少 2）
        p_max: 级数截断阶数
        n, h_n: 每次重复的规模与时间尺度
        window_width: 等宽窗口的宽度
        partition: "unit"（等宽窗口）或 "random"（随机划分）
        seed: 基础种子
        workers: 并行进程数
        show_progress: 是否显示进度条

    Returns:
        SchemeConstants

    Raises:
        ConfigError: R < 2 或配置不合法
    """
    from .montecarlo import run_replications

    if replications < 2:
        raise ConfigError("常数估计至少需要 2 次重复", field="run.replications")
    if partition not in ("unit", "random"):
        raise ConfigError(f"未知的划分方式: {partition}", field="asymptotics.partition")
    base = as_seed_sequence(seed)
    tasks = [(generator, n, h_n, p_max, window_width, partition, child)
             for child in base.spawn(replications)]
    logger.info(f"开始估计方案常数: 生成器={generator.kind}, R={replications}, "
                f"n={n}, h_n={h_n}, p_max={p_max}")
    results = run_replications(_constants_replication, tasks, workers=workers,
                               show_progress=show_progress, desc="方案常数")

    a0 = np.stack([r["a0"] for r in results])
    a = np.stack([r["a"] for r in results])
    f = np.stack([r["f"] for r in results])
    root_r = math.sqrt(replications)

    def mean_se(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return x.mean(axis=0), x.std(axis=0, ddof=1) / root_r

    a0_m, a0_s = mean_se(a0)
    a_m, a_s = mean_se(a)
    f_m, f_s = mean_se(f)
    if generator.deterministic:
        # 确定性方案的常数精确已知，消除浮点抖动
        a0_s, a_s, f_s = np.zeros_like(a0_s), np.zeros_like(a_s), np.zeros_like(f_s)

    diagnostics = {key: float(np.mean([r["diag"][key] for r in results]))
                   for key in sorted(results[0]["diag"])}

    constants = SchemeConstants(
        a0=a0_m, a=a_m, f11=f_m[:, 0], f12=f_m[:, 1], f22=f_m[:, 2],
        a0_se=a0_s, a_se=a_s, f11_se=f_s[:, 0], f12_se=f_s[:, 1], f22_se=f_s[:, 2],
        replications=replications,
        windows={"kind": partition, "width": window_width, "trimmed": 1,
                 "n": n, "h_n": h_n, "generator": generator.to_dict()},
        diagnostics=diagnostics)
    logger.info(f"方案常数估计完成: a0={a0_m.round(4).tolist()}, a1={a_m[0]:.4f}")
    return constants


# ----------------------------------------------------------------------
# 文本格式
# ----------------------------------------------------------------------
def _fmt(values: np.ndarray) -> str:
    return " ".join(format(float(v), ".17g") for v in values)


def dump_scheme(scheme: SamplingScheme, path: Union[str, Path]) -> None:
    """写出方案文件：首行 "n h_n"，随后两行分别为 grid1 与 grid2"""
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"{scheme.n} {format(scheme.h_n, '.17g')}\n")
        f.write(_fmt(scheme.grid1) + "\n")
        f.write(_fmt(scheme.grid2) + "\n")


def read_data_lines(path: Union[str, Path], expected: int) -> List[str]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = [line.strip() for line in f if line.strip()]
    except OSError as e:
        raise DataError(f"无法读取文件: {e}", path=str(path))
    if len(lines) != expected:
        raise DataError(f"应有 {expected} 行非空内容，实际 {len(lines)} 行",
                        line=min(len(lines) + 1, expected), path=str(path))
    return lines


def parse_floats(text: str, line: int, path: str) -> np.ndarray:
    try:
        return np.array([float(tok) for tok in text.split()])
    except ValueError as e:
        raise DataError(f"无法解析数值: {e}", line=line, path=path)


def load_scheme(path: Union[str, Path]) -> SamplingScheme:
    """读取方案文件，格式错误时抛出带行号的 DataError"""
    lines = read_data_lines(path, 3)
    header = lines[0].split()
    if len(header) != 2:
        raise DataError("首行应为 'n h_n'", line=1, path=str(path))
    try:
        n, h_n = int(header[0]), float(header[1])
    except ValueError as e:
        raise DataError(f"首行无法解析: {e}", line=1, path=str(path))
    grid1 = parse_floats(lines[1], 2, str(path))
    grid2 = parse_floats(lines[2], 3, str(path))
    for line_no, grid in ((2, grid1), (3, grid2)):
        try:
            SamplingScheme(grid, grid, n, h_n)
        except DomainError as e:
            raise DataError(str(e), line=line_no, path=str(path))
    return SamplingScheme(grid1, grid2, n, h_n, generator="file")
