#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
实验配置
读取 TOML 配置文件，校验各个配置块，并构造模型、生成器、优化器与方案常数

作者: NSync Team
创建时间: 2026-10-19
版本: 1.0.0
"""

import hashlib
import json
import logging
import math
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from .asymptotics import LimitConstants
from .errors import ConfigError, NSyncError
from .estimator import OptimizerConfig
from .model import CoefficientModel, ParamSpace, constant_model, load_custom_model, periodic_model
from .sampling import SchemeConstants, SchemeGenerator, choose_p_max, estimate_constants

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

logger = logging.getLogger(__name__)

# 默认值集中在此处
DEFAULTS: Dict[str, Dict[str, Any]] = {
    "model": {"family": "constant", "amplitude": 0.5, "drift_amplitude": 0.0},
    "sampling": {"generator": "poisson", "lambda1": 1.0, "lambda2": 1.0,
                 "offset2": 0.0, "jitter": 0.0, "n": 2000, "gamma": 0.5},
    "run": {"replications": 400, "seed": 0, "workers": 1, "progress": False},
    "asymptotics": {"t_avg": 100.0, "constants": "estimate", "replications": 200,
                    "window_width": 1.0, "partition": "unit"},
    "output": {"directory": "results"},
    "lan": {"replications": 400},
}

CONSTANTS_SOURCES = ("inline", "file", "estimate", "synchronous")
FAMILIES = ("constant", "periodic", "custom")


def _floats(value: Any, name: str) -> List[float]:
    if value is None:
        return []
    if isinstance(value, (int, float)):
        return [float(value)]
    try:
        return [float(v) for v in value]
    except (TypeError, ValueError):
        raise ConfigError(f"{name} 必须是数值或数值列表", field=name)


@dataclass
class ModelConfig:
    """[model] 配置块"""
    family: str = DEFAULTS["model"]["family"]
    sigma_names: List[str] = field(default_factory=lambda: ["vol"])
    sigma_lower: List[float] = field(default_factory=lambda: [0.1])
    sigma_upper: List[float] = field(default_factory=lambda: [5.0])
    sigma0: Optional[List[float]] = None
    theta_names: List[str] = field(default_factory=lambda: ["mu"])
    theta_lower: List[float] = field(default_factory=lambda: [-5.0])
    theta_upper: List[float] = field(default_factory=lambda: [5.0])
    theta0: Optional[List[float]] = None
    fixed: Dict[str, float] = field(default_factory=dict)
    period: Optional[float] = None
    amplitude: float = DEFAULTS["model"]["amplitude"]
    drift_amplitude: float = DEFAULTS["model"]["drift_amplitude"]
    c1: Optional[float] = None
    c2: Optional[float] = None
    rho_max: Optional[float] = None
    factory: Optional[str] = None
    options: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise ConfigError(f"未知的模型族: {self.family}", field="model.family")
        if self.family == "custom" and not self.factory:
            raise ConfigError("custom 模型族需要 factory", field="model.factory")
        self.sigma_names = [str(s) for s in self.sigma_names]
        self.theta_names = [str(s) for s in self.theta_names]
        self.sigma_lower = _floats(self.sigma_lower, "model.sigma_lower")
        self.sigma_upper = _floats(self.sigma_upper, "model.sigma_upper")
        self.theta_lower = _floats(self.theta_lower, "model.theta_lower")
        self.theta_upper = _floats(self.theta_upper, "model.theta_upper")
        if self.sigma0 is not None:
            self.sigma0 = _floats(self.sigma0, "model.sigma0")
        if self.theta0 is not None:
            self.theta0 = _floats(self.theta0, "model.theta0")
        self.fixed = {str(k): float(v) for k, v in self.fixed.items()}

    def param_space(self) -> ParamSpace:
        return ParamSpace(self.sigma_names, self.sigma_lower, self.sigma_upper,
                          self.theta_names, self.theta_lower, self.theta_upper,
                          self.sigma0, self.theta0)

    def require_truth(self) -> None:
        if self.sigma0 is None:
            raise ConfigError("该命令需要真值", field="model.sigma0")
        if self.theta0 is None:
            raise ConfigError("该命令需要真值", field="model.theta0")


@dataclass
class SamplingConfig:
    """[sampling] 配置块；h_n 缺省时取 n^{-gamma}"""
    generator: str = DEFAULTS["sampling"]["generator"]
    lambda1: float = DEFAULTS["sampling"]["lambda1"]
    lambda2: float = DEFAULTS["sampling"]["lambda2"]
    offset2: float = DEFAULTS["sampling"]["offset2"]
    jitter: float = DEFAULTS["sampling"]["jitter"]
    n: int = DEFAULTS["sampling"]["n"]
    h_n: Optional[float] = None
    gamma: float = DEFAULTS["sampling"]["gamma"]

    def __post_init__(self) -> None:
        if int(self.n) != self.n or self.n < 10:
            raise ConfigError("n 必须是不小于 10 的整数", field="sampling.n")
        self.n = int(self.n)
        if self.h_n is None:
            if not (0.0 < self.gamma < 1.0):
                raise ConfigError("gamma 必须位于 (0, 1)", field="sampling.gamma")
            self.h_n = self.n ** (-self.gamma)
        elif not (self.h_n > 0 and math.isfinite(self.h_n)):
            raise ConfigError("h_n 必须为正", field="sampling.h_n")
        self.h_n = float(self.h_n)
        self.scheme_generator()

    @property
    def T_n(self) -> float:
        assert self.h_n is not None
        return self.n * self.h_n

    def scheme_generator(self) -> SchemeGenerator:
        return SchemeGenerator(kind=self.generator, lam1=self.lambda1, lam2=self.lambda2,
                               offset2=self.offset2, jitter=self.jitter)


@dataclass
class RunConfig:
    """[run] 配置块"""
    replications: int = DEFAULTS["run"]["replications"]
    seed: int = DEFAULTS["run"]["seed"]
    workers: int = DEFAULTS["run"]["workers"]
    progress: bool = DEFAULTS["run"]["progress"]

    def __post_init__(self) -> None:
        if self.replications < 1:
            raise ConfigError("replications 必须 ≥ 1", field="run.replications")
        if self.seed < 0:
            raise ConfigError("seed 必须是非负整数", field="run.seed")
        if self.workers < 1:
            raise ConfigError("workers 必须 ≥ 1", field="run.workers")


@dataclass
class AsymptoticsConfig:
    """
    [asymptotics] 配置块

    constants 取 inline | file | estimate | synchronous：
    inline 使用 values 中给出的常数，file 读取 constants_file，
    estimate 先用蒙特卡洛估计，synchronous 使用同步方案的精确常数。
    """
    p_max: Optional[int] = None
    t_avg: float = DEFAULTS["asymptotics"]["t_avg"]
    constants: str = DEFAULTS["asymptotics"]["constants"]
    constants_file: Optional[str] = None
    values: Dict[str, Any] = field(default_factory=dict)
    replications: int = DEFAULTS["asymptotics"]["replications"]
    n: Optional[int] = None
    h_n: Optional[float] = None
    window_width: float = DEFAULTS["asymptotics"]["window_width"]
    partition: str = DEFAULTS["asymptotics"]["partition"]

    def __post_init__(self) -> None:
        if self.constants not in CONSTANTS_SOURCES:
            raise ConfigError(f"未知的常数来源: {self.constants}", field="asymptotics.constants")
        if self.constants == "file" and not self.constants_file:
            raise ConfigError("constants = 'file' 需要 constants_file",
                              field="asymptotics.constants_file")
        if self.constants == "inline" and not self.values:
            raise ConfigError("constants = 'inline' 需要 values", field="asymptotics.values")
        if self.p_max is not None and self.p_max < 1:
            raise ConfigError("p_max 必须 ≥ 1", field="asymptotics.p_max")
        if self.t_avg <= 0:
            raise ConfigError("t_avg 必须为正", field="asymptotics.t_avg")
        if self.window_width <= 0:
            raise ConfigError("window_width 必须为正", field="asymptotics.window_width")
        if self.partition not in ("unit", "random"):
            raise ConfigError(f"未知的划分方式: {self.partition}", field="asymptotics.partition")


@dataclass
class OutputConfig:
    """[output] 配置块，文件名相对于 directory"""
    directory: str = DEFAULTS["output"]["directory"]
    scheme: str = "scheme.txt"
    increments: str = "increments.txt"
    report: str = "estimate.json"
    replications_csv: str = "mc_replications.csv"
    summary: str = "mc_summary.json"
    constants: str = "constants.json"
    lan: str = "lan.json"
    matrix: Optional[str] = None

    def path(self, name: str) -> Path:
        return Path(self.directory) / name


@dataclass
class LanConfig:
    """[lan] 配置块；u 缺省时取第一个坐标方向的单位向量"""
    u: Optional[List[float]] = None
    replications: int = DEFAULTS["lan"]["replications"]

    def __post_init__(self) -> None:
        if self.u is not None:
            self.u = _floats(self.u, "lan.u")
        if self.replications < 1:
            raise ConfigError("replications 必须 ≥ 1", field="lan.replications")


_BLOCKS = {
    "model": ModelConfig,
    "sampling": SamplingConfig,
    "run": RunConfig,
    "asymptotics": AsymptoticsConfig,
    "output": OutputConfig,
    "lan": LanConfig,
    "estimator": OptimizerConfig,
}


def _build_block(cls: Any, name: str, data: Dict[str, Any]) -> Any:
    if not isinstance(data, dict):
        raise ConfigError(f"[{name}] 必须是表", field=name)
    known = set(cls.__dataclass_fields__)
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"[{name}] 含未知字段: {', '.join(unknown)}", field=f"{name}.{unknown[0]}")
    try:
        return cls(**data)
    except TypeError as e:
        raise ConfigError(f"[{name}] 字段类型错误: {e}", field=name)


@dataclass
class ExperimentConfig:
    """完整的实验配置"""
    model: ModelConfig = field(default_factory=ModelConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    run: RunConfig = field(default_factory=RunConfig)
    asymptotics: AsymptoticsConfig = field(default_factory=AsymptoticsConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    lan: LanConfig = field(default_factory=LanConfig)
    estimator: OptimizerConfig = field(default_factory=OptimizerConfig)
    source: Optional[str] = None

    @classmethod
    def from_dict(cls, data: Dict[str, Any], source: Optional[str] = None) -> "ExperimentConfig":
        unknown = sorted(set(data) - set(_BLOCKS))
        if unknown:
            raise ConfigError(f"未知的配置块: {', '.join(unknown)}", field=unknown[0])
        blocks = {name: _build_block(block, name, data.get(name, {}))
                  for name, block in _BLOCKS.items()}
        return cls(source=source, **blocks)

    def to_dict(self) -> Dict[str, Any]:
        return {name: asdict(getattr(self, name)) for name in _BLOCKS}

    def fingerprint(self) -> str:
        """配置内容的 sha256 指纹"""
        text = json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    def apply_overrides(self, seed: Optional[int] = None, workers: Optional[int] = None,
                        out: Optional[str] = None) -> "ExperimentConfig":
        """命令行参数覆盖配置文件"""
        if seed is not None:
            if seed < 0:
                raise ConfigError("seed 必须是非负整数", field="run.seed")
            self.run.seed = seed
        if workers is not None:
            if workers < 1:
                raise ConfigError("workers 必须 ≥ 1", field="run.workers")
            self.run.workers = workers
        if out is not None:
            self.output.directory = out
        return self


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    """
    读取 TOML 配置文件

    Raises:
        ConfigError: 文件缺失、语法错误或字段不合法
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"配置文件不存在: {path}", field="config")
    try:
        with open(path, "rb") as f:
            data = tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"配置文件语法错误: {e}", field="config")
    cfg = ExperimentConfig.from_dict(data, source=str(path))
    logger.info(f"已加载配置: {path}")
    return cfg


def build_model(cfg: ModelConfig) -> CoefficientModel:
    """按 [model] 配置构造系数模型"""
    params = cfg.param_space()
    if cfg.family == "constant":
        return constant_model(params, cfg.fixed, cfg.c1, cfg.c2, cfg.rho_max)
    if cfg.family == "periodic":
        return periodic_model(params, cfg.period, cfg.amplitude, cfg.drift_amplitude,
                              cfg.fixed, cfg.c1, cfg.c2, cfg.rho_max)
    assert cfg.factory is not None
    return load_custom_model(cfg.factory, params, cfg.options)


def resolve_p_max(cfg: ExperimentConfig, model: CoefficientModel) -> int:
    if cfg.asymptotics.p_max is not None:
        return cfg.asymptotics.p_max
    return choose_p_max(model.rho_max)


def constants_horizon(cfg: ExperimentConfig) -> Tuple[int, float]:
    """估计方案常数时使用的 (n, h_n)，[asymptotics] 未给出时沿用 [sampling]"""
    ac, sc = cfg.asymptotics, cfg.sampling
    n = ac.n if ac.n is not None else sc.n
    h_n = ac.h_n if ac.h_n is not None else sc.h_n
    if h_n is None:
        raise ConfigError("无法确定 h_n", field="sampling.h_n")
    return n, h_n


def resolve_constants(cfg: ExperimentConfig, model: CoefficientModel,
                      required: bool = True) -> Optional[SchemeConstants]:
    """
    按 [asymptotics] 配置获取方案常数

    Args:
        cfg: 实验配置
        model: 系数模型（决定 p_max 的缺省值）
        required: 为 False 时，file 来源下文件缺失返回 None 而不是报错

    Returns:
        SchemeConstants 或 None
    """
    ac = cfg.asymptotics
    p_max = resolve_p_max(cfg, model)
    if ac.constants == "synchronous":
        return SchemeConstants.synchronous(p_max)
    if ac.constants == "inline":
        try:
            return SchemeConstants.from_dict(ac.values)
        except (NSyncError, KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"inline 常数不合法: {e}", field="asymptotics.values")
    if ac.constants == "file":
        if ac.constants_file is None:
            raise ConfigError("constants = 'file' 需要 constants_file",
                              field="asymptotics.constants_file")
        if not Path(ac.constants_file).exists() and not required:
            logger.warning(f"常数文件不存在，跳过代入式标准误: {ac.constants_file}")
            return None
        return SchemeConstants.load(ac.constants_file)

    n, h_n = constants_horizon(cfg)
    return estimate_constants(cfg.sampling.scheme_generator(), ac.replications, p_max, n, h_n,
                              window_width=ac.window_width, partition=ac.partition,
                              seed=cfg.run.seed, workers=cfg.run.workers,
                              show_progress=cfg.run.progress)


def require_constants(cfg: ExperimentConfig, model: CoefficientModel) -> SchemeConstants:
    """mc 与 lan 必须有方案常数，拿不到时报配置错误"""
    constants = resolve_constants(cfg, model)
    if constants is None:
        raise ConfigError("缺少方案常数", field="asymptotics.constants")
    return constants


def limit_constants(cfg: ExperimentConfig, model: CoefficientModel,
                    constants: SchemeConstants) -> LimitConstants:
    """方案常数加上 [asymptotics] 中的时间平均设置"""
    return LimitConstants.for_model(model, constants, t_avg=cfg.asymptotics.t_avg)
