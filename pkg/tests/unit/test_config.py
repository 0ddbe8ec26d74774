#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
实验配置单元测试
"""

import numpy as np
import pytest

from nsync import config as config_module
from nsync.asymptotics import AveragePolicy
from nsync.config import (ExperimentConfig, SamplingConfig, build_model, constants_horizon,
                          limit_constants, load_config, require_constants,
                          resolve_constants, resolve_p_max)
from nsync.errors import ConfigError, DataError
from nsync.model import TimeStructure

BASIC = """
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
    n = 400
    gamma = 0.5

    [asymptotics]
    constants = "synchronous"
"""


class TestLoadConfig:
    def test_load_config_defaults(self, write_config):
        """测试缺省值与 h_n = n^{-gamma}"""
        cfg = load_config(write_config(BASIC))
        assert cfg.sampling.h_n == pytest.approx(0.05)
        assert cfg.sampling.T_n == pytest.approx(20.0)
        assert cfg.run.replications == 400 and cfg.run.workers == 1
        assert cfg.output.summary == "mc_summary.json"
        assert cfg.estimator.theta_method == "auto"

    def test_load_config_missing_file(self, tmp_path):
        """测试配置文件不存在"""
        with pytest.raises(ConfigError) as exc:
            load_config(tmp_path / "nope.toml")
        assert exc.value.exit_code == 2

    def test_load_config_syntax_error(self, write_config):
        """测试 TOML 语法错误"""
        with pytest.raises(ConfigError):
            load_config(write_config("[model\nfamily = 1\n"))

    def test_load_config_unknown_field(self, write_config):
        """测试未知字段报告字段名"""
        with pytest.raises(ConfigError) as exc:
            load_config(write_config(BASIC + "\n[run]\nrepetitions = 3\n"))
        assert exc.value.field == "run.repetitions"

    def test_load_config_unknown_block(self, write_config):
        """测试未知配置块"""
        with pytest.raises(ConfigError) as exc:
            load_config(write_config(BASIC + "\n[plotting]\ndpi = 300\n"))
        assert exc.value.field == "plotting"

    def test_load_config_unknown_estimator_field(self, write_config):
        """测试 [estimator] 中的拼写错误不会被忽略"""
        with pytest.raises(ConfigError) as exc:
            load_config(write_config(BASIC + "\n[estimator]\ntheta_metod = \"gls\"\n"))
        assert exc.value.field == "estimator.theta_metod"


class TestSamplingConfig:
    def test_explicit_h_n(self):
        """测试显式给出 h_n"""
        assert SamplingConfig(n=100, h_n=0.2).T_n == pytest.approx(20.0)

    def test_n_too_small(self):
        """测试 n < 10"""
        with pytest.raises(ConfigError) as exc:
            SamplingConfig(n=5)
        assert exc.value.field == "sampling.n"

    def test_gamma_out_of_range(self):
        """测试 gamma 越界"""
        with pytest.raises(ConfigError):
            SamplingConfig(n=100, gamma=1.0)

    def test_unknown_generator(self):
        """测试未知生成器"""
        with pytest.raises(ConfigError) as exc:
            SamplingConfig(generator="hawkes")
        assert exc.value.field == "sampling.generator"


class TestExperimentConfig:
    def test_fingerprint_stable(self, write_config):
        """测试相同内容的指纹相同，修改后不同"""
        a = load_config(write_config(BASIC, "a.toml"))
        b = load_config(write_config(BASIC, "b.toml"))
        assert a.fingerprint() == b.fingerprint()
        b.apply_overrides(seed=9)
        assert a.fingerprint() != b.fingerprint()

    def test_apply_overrides(self, write_config, tmp_path):
        """测试命令行覆盖"""
        cfg = load_config(write_config(BASIC)).apply_overrides(seed=3, workers=4,
                                                               out=str(tmp_path / "o"))
        assert (cfg.run.seed, cfg.run.workers) == (3, 4)
        assert cfg.output.path("x.json") == tmp_path / "o" / "x.json"

    def test_apply_overrides_bad_workers(self):
        """测试非法的进程数"""
        with pytest.raises(ConfigError):
            ExperimentConfig().apply_overrides(workers=0)

    def test_inline_requires_values(self):
        """测试 inline 常数缺少 values"""
        with pytest.raises(ConfigError) as exc:
            ExperimentConfig.from_dict({"asymptotics": {"constants": "inline"}})
        assert exc.value.field == "asymptotics.values"

    def test_custom_requires_factory(self):
        """测试 custom 模型族缺少工厂"""
        with pytest.raises(ConfigError) as exc:
            ExperimentConfig.from_dict({"model": {"family": "custom"}})
        assert exc.value.field == "model.factory"


class TestBuilders:
    def test_build_model_constant(self, write_config):
        """测试构造常系数模型"""
        model = build_model(load_config(write_config(BASIC)).model)
        assert model.structure == TimeStructure.CONSTANT
        np.testing.assert_allclose(model.sigma_matrix(0.0, [0.3]), [[1.0, 0.3], [0.3, 1.0]])

    def test_build_model_periodic(self):
        """测试构造周期模型"""
        cfg = ExperimentConfig.from_dict({"model": {"family": "periodic", "period": 2.0}})
        model = build_model(cfg.model)
        assert model.structure == TimeStructure.PERIODIC and model.period == 2.0

    def test_build_model_custom(self):
        """测试按工厂路径构造模型"""
        cfg = ExperimentConfig.from_dict({"model": {"family": "custom",
                                                    "factory": "nsync.model:constant_model"}})
        assert build_model(cfg.model).params.sigma_names == ("vol",)

    def test_resolve_constants_synchronous(self, write_config):
        """测试同步常数的阶数取自模型的 ρ_max"""
        cfg = load_config(write_config(BASIC))
        model = build_model(cfg.model)
        sc = resolve_constants(cfg, model)
        assert sc.p_max == resolve_p_max(cfg, model) >= 40
        assert limit_constants(cfg, model, sc).policy == AveragePolicy.POINTWISE

    def test_resolve_constants_inline(self, write_config):
        """测试 inline 常数"""
        text = BASIC.replace('constants = "synchronous"', """constants = "inline"
    values = { a0 = [1.0, 1.0], a = [0.5, 0.25], f11 = [1.0, 0.5, 0.25], f12 = [1.0, 0.5, 0.25], f22 = [1.0, 0.5, 0.25] }""")
        cfg = load_config(write_config(text))
        sc = resolve_constants(cfg, build_model(cfg.model))
        np.testing.assert_array_equal(sc.a, [0.5, 0.25])

    def test_resolve_constants_missing_file(self, write_config, tmp_path):
        """测试常数文件缺失"""
        text = BASIC.replace('constants = "synchronous"',
                             f'constants = "file"\n    constants_file = "{tmp_path / "c.json"}"')
        cfg = load_config(write_config(text))
        model = build_model(cfg.model)
        assert resolve_constants(cfg, model, required=False) is None
        with pytest.raises(DataError):
            resolve_constants(cfg, model)

    def test_require_constants_missing(self, write_config, monkeypatch):
        """测试拿不到方案常数时报配置错误而不是断言失败"""
        cfg = load_config(write_config(BASIC))
        model = build_model(cfg.model)
        monkeypatch.setattr(config_module, "resolve_constants", lambda *args, **kwargs: None)
        with pytest.raises(ConfigError) as exc:
            require_constants(cfg, model)
        assert exc.value.field == "asymptotics.constants"
        assert exc.value.exit_code == 2

    def test_require_constants_synchronous(self, write_config):
        """测试同步常数直接返回"""
        cfg = load_config(write_config(BASIC))
        model = build_model(cfg.model)
        assert require_constants(cfg, model).p_max == resolve_p_max(cfg, model)

    def test_constants_horizon(self, write_config):
        """测试 [asymptotics] 的 n、h_n 优先，缺省时沿用 [sampling]"""
        cfg = load_config(write_config(BASIC))
        assert constants_horizon(cfg) == (400, pytest.approx(400 ** -0.5))
        text = BASIC.replace('constants = "synchronous"',
                             'constants = "synchronous"\n    n = 1000\n    h_n = 0.02')
        cfg = load_config(write_config(text))
        assert constants_horizon(cfg) == (1000, pytest.approx(0.02))
