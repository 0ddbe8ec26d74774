#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
命令行入口
nsync simulate | estimate | mc | constants | lan

使用示例:
  # 模拟一组非同步观测
  nsync simulate --config experiment.toml --seed 1 --out results/

  # 两阶段估计
  nsync estimate --config experiment.toml --scheme results/scheme.txt --increments results/increments.txt

  # 蒙特卡洛验证
  nsync mc --config experiment.toml --workers 8 -v

作者: NSync Team
创建时间: 2026-10-19
版本: 1.0.0
"""

import json
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Optional

import click
import numpy as np

from . import __version__
from .asymptotics import lan_experiment
from .config import (ExperimentConfig, build_model, constants_horizon, limit_constants,
                     load_config, require_constants, resolve_constants, resolve_p_max)
from .errors import NSyncError
from .estimator import estimate
from .gaussian import assemble, dump_increments, dump_matrix, load_increments, simulate_increments
from .montecarlo import check_failure_rate, replication_seed, run_monte_carlo
from .sampling import dump_scheme, estimate_constants, load_scheme

logger = logging.getLogger(__name__)


def _json_default(obj: Any) -> Any:
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"无法序列化的类型: {type(obj).__name__}")


def write_json(path: Path, payload: Any) -> None:
    """写 JSON 文件（键排序，保证同一输入得到相同字节）"""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, ensure_ascii=False, indent=2, sort_keys=True, default=_json_default)
        f.write("\n")
    logger.info(f"已写入: {path}")


def _prepare(config: str, seed: Optional[int], workers: Optional[int],
             out: Optional[str]) -> ExperimentConfig:
    cfg = load_config(config).apply_overrides(seed=seed, workers=workers, out=out)
    Path(cfg.output.directory).mkdir(parents=True, exist_ok=True)
    return cfg


def common_options(fn: Callable[..., Any]) -> Callable[..., Any]:
    """各子命令共用的选项"""
    fn = click.option("--out", type=click.Path(file_okay=False), default=None,
                      help="输出目录（覆盖 [output].directory）")(fn)
    fn = click.option("--workers", type=int, default=None, help="并行进程数")(fn)
    fn = click.option("--seed", type=int, default=None, help="基础随机种子")(fn)
    fn = click.option("--config", "config", type=click.Path(dir_okay=False), required=True,
                      help="TOML 配置文件")(fn)
    return fn


@click.group()
@click.version_option(__version__, prog_name="nsync")
@click.option("--verbose", "-v", is_flag=True, help="显示详细日志")
def cli(verbose: bool) -> None:
    """非同步观测二维扩散过程的拟似然估计工具"""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format='%(asctime)s - %(levelname)s - %(message)s')


@cli.command()
@common_options
@click.option("--matrix/--no-matrix", default=False, help="同时导出 S_n(σ0) 的稀疏三元组")
def simulate(config: str, seed: Optional[int], workers: Optional[int], out: Optional[str],
             matrix: bool) -> None:
    """生成一个观测方案并精确模拟增量"""
    cfg = _prepare(config, seed, workers, out)
    cfg.model.require_truth()
    model = build_model(cfg.model)
    sigma0, theta0 = model.params.require_truth()
    scheme_ss, noise_ss = replication_seed(cfg.run.seed, 0).spawn(2)
    scheme = cfg.sampling.scheme_generator().draw(cfg.sampling.n, cfg.sampling.h_n, scheme_ss)
    op = assemble(scheme, None, model, sigma0)
    dx = simulate_increments(scheme, model, sigma0, theta0, noise_ss, op=op)

    dump_scheme(scheme, cfg.output.path(cfg.output.scheme))
    dump_increments(dx, cfg.output.path(cfg.output.increments))
    if matrix:
        dump_matrix(op, cfg.output.path(cfg.output.matrix or "matrix.txt"))
    click.echo(f"模拟完成: M1={scheme.M1}, M2={scheme.M2}, T_n={scheme.T_n:.4f}, "
               f"输出目录 {cfg.output.directory}")


@cli.command("estimate")
@common_options
@click.option("--scheme", "scheme_path", type=click.Path(dir_okay=False), default=None,
              help="方案文件（默认取输出目录下的方案文件）")
@click.option("--increments", "increments_path", type=click.Path(dir_okay=False), default=None,
              help="增量文件（默认取输出目录下的增量文件）")
@click.option("--constants/--no-constants", "use_constants", default=True,
              help="是否计算代入式标准误")
def estimate_cmd(config: str, seed: Optional[int], workers: Optional[int], out: Optional[str],
                 scheme_path: Optional[str], increments_path: Optional[str],
                 use_constants: bool) -> None:
    """对观测数据做两阶段拟似然估计"""
    cfg = _prepare(config, seed, workers, out)
    scheme = load_scheme(scheme_path or cfg.output.path(cfg.output.scheme))
    dx = load_increments(increments_path or cfg.output.path(cfg.output.increments), scheme)
    model = build_model(cfg.model)

    constants = None
    if use_constants:
        sc = resolve_constants(cfg, model, required=False)
        constants = None if sc is None else limit_constants(cfg, model, sc)
    report = estimate(dx, scheme, model, cfg.estimator, constants)

    payload = report.to_dict()
    payload["config_fingerprint"] = cfg.fingerprint()
    payload["version"] = __version__
    path = cfg.output.path(cfg.output.report)
    write_json(path, payload)
    click.echo(f"估计完成: σ̂={np.round(report.sigma_hat, 6).tolist()}, "
               f"θ̂={np.round(report.theta_hat, 6).tolist()} → {path}")


@cli.command()
@common_options
def mc(config: str, seed: Optional[int], workers: Optional[int], out: Optional[str]) -> None:
    """蒙特卡洛验证渐近正态性"""
    cfg = _prepare(config, seed, workers, out)
    cfg.model.require_truth()
    model = build_model(cfg.model)
    sc = require_constants(cfg, model)
    constants = limit_constants(cfg, model, sc)

    df, summary = run_monte_carlo(model, cfg.sampling.scheme_generator(), cfg.sampling.n,
                                  cfg.sampling.h_n, cfg.run.replications, constants,
                                  optimizer=cfg.estimator, seed=cfg.run.seed,
                                  workers=cfg.run.workers, show_progress=cfg.run.progress)
    csv_path = cfg.output.path(cfg.output.replications_csv)
    df.to_csv(csv_path, index=False, float_format="%.17g")
    logger.info(f"已写入: {csv_path}")

    summary.csv_path = str(csv_path)
    summary.fingerprint = cfg.fingerprint()
    summary.version = __version__
    path = cfg.output.path(cfg.output.summary)
    write_json(path, summary.to_dict())
    check_failure_rate(summary)
    click.echo(f"蒙特卡洛完成: R={summary.replications}, 失败 {summary.failures} → {path}")


@cli.command()
@common_options
def constants(config: str, seed: Optional[int], workers: Optional[int],
              out: Optional[str]) -> None:
    """估计观测方案的极限常数 a_p、f_p"""
    cfg = _prepare(config, seed, workers, out)
    model = build_model(cfg.model)
    ac = cfg.asymptotics
    n, h_n = constants_horizon(cfg)
    result = estimate_constants(cfg.sampling.scheme_generator(), ac.replications,
                                resolve_p_max(cfg, model), n, h_n,
                                window_width=ac.window_width, partition=ac.partition,
                                seed=cfg.run.seed, workers=cfg.run.workers,
                                show_progress=cfg.run.progress)
    path = cfg.output.path(cfg.output.constants)
    result.save(path)
    click.echo(f"方案常数: a0={np.round(result.a0, 4).tolist()}, "
               f"a1={result.a[0]:.4f} ± {result.a_se[0]:.4f} → {path}")


@cli.command()
@common_options
def lan(config: str, seed: Optional[int], workers: Optional[int], out: Optional[str]) -> None:
    """局部渐近正态性实验"""
    cfg = _prepare(config, seed, workers, out)
    cfg.model.require_truth()
    model = build_model(cfg.model)
    sc = require_constants(cfg, model)
    d = model.params.d1 + model.params.d2
    u = cfg.lan.u if cfg.lan.u is not None else [1.0] + [0.0] * (d - 1)
    summary = lan_experiment(u, model, cfg.sampling.scheme_generator(), cfg.sampling.n,
                             cfg.sampling.h_n, cfg.lan.replications,
                             limit_constants(cfg, model, sc), seed=cfg.run.seed,
                             workers=cfg.run.workers, show_progress=cfg.run.progress)
    summary["config_fingerprint"] = cfg.fingerprint()
    summary["version"] = __version__
    path = cfg.output.path(cfg.output.lan)
    write_json(path, summary)
    click.echo(f"LAN 实验完成: 均值={summary['mean']:.4f}, 方差={summary['variance']:.4f} → {path}")


def main(argv: Optional[list] = None) -> int:
    """控制台入口，按异常类型返回退出码"""
    try:
        cli.main(args=argv, prog_name="nsync", standalone_mode=False)
    except NSyncError as e:
        logger.error(f"{type(e).__name__}: {e}")
        click.echo(f"错误: {e}", err=True)
        return e.exit_code
    except click.exceptions.Abort:
        click.echo("已中止", err=True)
        return 1
    except click.ClickException as e:
        e.show()
        return e.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
