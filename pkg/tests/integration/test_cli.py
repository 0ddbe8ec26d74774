#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
命令行端到端测试
"""

import json
from pathlib import Path

import pandas as pd
import pytest

from nsync.cli import main

pytestmark = pytest.mark.integration

CONFIG = """
    [model]
    family = "constant"
    sigma_names = ["rho"]
    sigma_lower = [-0.6]
    sigma_upper = [0.6]
    sigma0 = [0.3]
    theta_names = ["mu"]
    theta_lower = [-3.0]
    theta_upper = [3.0]
    theta0 = [0.2]

    [sampling]
    generator = "poisson"
    n = 100
    h_n = 0.1

    [run]
    replications = 3
    seed = 11

    [asymptotics]
    constants = "synchronous"
    replications = 2

    [lan]
    replications = 5
"""


@pytest.fixture
def config(write_config, tmp_path):
    """配置文件路径与输出目录"""
    return write_config(CONFIG), tmp_path / "out"


def run(path: Path, out: Path, *args: str) -> int:
    command, rest = args[0], list(args[1:])
    return main([command, "--config", str(path), "--out", str(out)] + rest)


def read_json(path: Path) -> dict:
    return json.loads(path.read_text(encoding="utf-8"))


class TestSimulateEstimate:
    def test_simulate_then_estimate(self, config):
        """测试模拟后估计的完整流程"""
        path, out = config
        assert run(path, out, "simulate") == 0
        assert (out / "scheme.txt").exists() and (out / "increments.txt").exists()
        assert run(path, out, "estimate") == 0
        report = read_json(out / "estimate.json")
        assert -0.6 <= report["sigma_hat"][0] <= 0.6
        assert report["se_sigma_plugin"] is not None
        assert report["se_theta_observed"] is not None
        assert len(report["config_fingerprint"]) == 64

    def test_simulate_byte_identical(self, config, tmp_path):
        """测试相同配置与种子的输出逐字节相同"""
        path, out = config
        other = tmp_path / "again"
        assert run(path, out, "simulate", "--seed", "4") == 0
        assert run(path, other, "simulate", "--seed", "4") == 0
        for name in ("scheme.txt", "increments.txt"):
            assert (out / name).read_bytes() == (other / name).read_bytes()

    def test_simulate_matrix(self, config):
        """测试导出协方差矩阵"""
        path, out = config
        assert run(path, out, "simulate", "--matrix") == 0
        lines = (out / "matrix.txt").read_text(encoding="utf-8").splitlines()
        header = lines[0].split()
        assert len(header) == 3 and float(header[2]) == 0.3
        assert all(len(line.split()) == 3 for line in lines[1:])

    def test_simulate_missing_truth(self, write_config, tmp_path):
        """测试缺少真值时以配置错误退出"""
        text = CONFIG.replace("sigma0 = [0.3]", "")
        assert run(write_config(text), tmp_path / "out", "simulate") == 2

    def test_estimate_without_constants(self, config):
        """测试不计算代入式标准误时保留观测信息标准误"""
        path, out = config
        assert run(path, out, "simulate") == 0
        assert run(path, out, "estimate", "--no-constants") == 0
        report = read_json(out / "estimate.json")
        assert report["se_sigma_plugin"] is None
        assert report["se_sigma_observed"] is not None

    def test_estimate_corrupted_scheme(self, config):
        """测试方案文件网格不单调时以数据错误退出"""
        path, out = config
        assert run(path, out, "simulate") == 0
        lines = (out / "scheme.txt").read_text(encoding="utf-8").splitlines()
        grid = lines[1].split()
        grid[1], grid[2] = grid[2], grid[1]
        lines[1] = " ".join(grid)
        (out / "scheme.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
        assert run(path, out, "estimate") == 3

    def test_estimate_missing_data(self, config):
        """测试数据文件不存在"""
        path, out = config
        assert run(path, out, "estimate") == 3


class TestMonteCarlo:
    def test_mc_outputs(self, config):
        """测试逐次结果与汇总文件"""
        path, out = config
        assert run(path, out, "mc") == 0
        df = pd.read_csv(out / "mc_replications.csv", keep_default_na=False)
        assert len(df) == 3 and list(df.columns)[:2] == ["seed", "index"]
        summary = read_json(out / "mc_summary.json")
        assert summary["replications"] == 3 and summary["failures"] == 0
        assert summary["warnings"]
        assert "summary_excluding_boundary" in summary

    def test_mc_workers_identical(self, config, tmp_path):
        """测试进程数加倍时逐次结果逐字节相同"""
        path, out = config
        other = tmp_path / "parallel"
        assert run(path, out, "mc", "--workers", "1") == 0
        assert run(path, other, "mc", "--workers", "2") == 0
        assert (out / "mc_replications.csv").read_bytes() == \
            (other / "mc_replications.csv").read_bytes()

    def test_mc_single_replication(self, write_config, tmp_path):
        """测试 R = 1 时标准差字段为空"""
        text = CONFIG.replace("replications = 3", "replications = 1")
        out = tmp_path / "out"
        assert run(write_config(text), out, "mc") == 0
        summary = read_json(out / "mc_summary.json")
        assert summary["summary"]["parameters"]["rho"]["empirical_sd"] is None

    def test_mc_failure_threshold(self, write_config, tmp_path):
        """测试失败比例超过阈值时以运行失败退出"""
        text = CONFIG.replace('generator = "poisson"',
                              'generator = "poisson"\n    lambda1 = 1e-9\n    lambda2 = 1e-9')
        out = tmp_path / "out"
        assert run(write_config(text), out, "mc") == 4
        assert (out / "mc_summary.json").exists()


class TestConstantsLan:
    def test_constants_synchronous(self, write_config, tmp_path):
        """测试同步方案的常数精确为 1 且标准误为 0"""
        text = CONFIG.replace('generator = "poisson"', 'generator = "equidistant"')
        out = tmp_path / "out"
        assert run(write_config(text), out, "constants") == 0
        data = read_json(out / "constants.json")
        assert all(abs(v - 1.0) < 1e-9 for v in data["a"])
        assert all(v == 0.0 for v in data["a_se"])
        assert data["p_max"] == len(data["a"])

    def test_lan_zero_direction(self, write_config, tmp_path):
        """测试 u = 0 时对数似然比恒为 0"""
        text = CONFIG.replace("replications = 5", "replications = 5\n    u = [0.0, 0.0]")
        out = tmp_path / "out"
        assert run(write_config(text), out, "lan") == 0
        data = read_json(out / "lan.json")
        assert data["mean"] == 0.0 and data["u"] == [0.0, 0.0]

    def test_lan_default_direction(self, config):
        """测试缺省方向为第一个坐标的单位向量"""
        path, out = config
        assert run(path, out, "lan") == 0
        assert read_json(out / "lan.json")["u"] == [1.0, 0.0]


class TestCliErrors:
    def test_missing_config(self, tmp_path):
        """测试配置文件不存在"""
        assert main(["simulate", "--config", str(tmp_path / "nope.toml")]) == 2

    def test_unknown_command(self):
        """测试未知子命令"""
        assert main(["plot"]) != 0
