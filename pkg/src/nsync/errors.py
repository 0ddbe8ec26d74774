#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
统一错误定义
所有模块抛出的异常都继承自 NSyncError，命令行入口据 exit_code 决定退出码

作者: NSync Team
创建时间: 2026-10-19
版本: 1.0.0
"""

from typing import Optional


class NSyncError(Exception):
    """基础错误类"""
    exit_code = 1


class ConfigError(NSyncError):
    """配置错误，field 指明出错的配置项"""
    exit_code = 2

    def __init__(self, message: str, field: Optional[str] = None):
        self.field = field
        if field:
            message = f"[{field}] {message}"
        super().__init__(message)


class DataError(NSyncError):
    """数据文件错误，line 为出错行号（从 1 开始）"""
    exit_code = 3

    def __init__(self, message: str, line: Optional[int] = None,
                 path: Optional[str] = None):
        self.line = line
        self.path = path
        prefix = ""
        if path:
            prefix += f"{path}"
        if line is not None:
            prefix += f":{line}"
        if prefix:
            message = f"{prefix}: {message}"
        super().__init__(message)


class DomainError(NSyncError):
    """参数或输入超出定义域"""
    pass


class ContractError(NSyncError):
    """调用约定被破坏（维度不符、不支持的阶数等）"""
    pass


class NumericalError(NSyncError):
    """数值计算错误基类"""
    pass


class QuadratureError(NumericalError):
    """数值积分未收敛"""

    def __init__(self, message: str, achieved: float):
        self.achieved = achieved
        super().__init__(f"{message} (达到的误差: {achieved:.3e})")


class NotPositiveDefiniteError(NumericalError):
    """协方差矩阵不是正定矩阵"""

    def __init__(self, message: str, pivot: int = -1):
        self.pivot = pivot
        super().__init__(f"{message} (主元位置: {pivot})")


class IdentifiabilityError(NSyncError):
    """信息矩阵非正定，参数不可识别"""

    def __init__(self, message: str, eigenvalue: float):
        self.eigenvalue = eigenvalue
        super().__init__(f"{message} (最小特征值: {eigenvalue:.3e})")


class EstimationError(NSyncError):
    """估计失败，stage 为 'sigma' 或 'theta'"""

    def __init__(self, message: str, stage: str):
        self.stage = stage
        super().__init__(f"[{stage}] {message}")


class RunFailureError(NSyncError):
    """蒙特卡洛运行中失败比例超过阈值"""
    exit_code = 4

    def __init__(self, message: str, failure_rate: float):
        self.failure_rate = failure_rate
        super().__init__(f"{message} (失败比例: {failure_rate:.1%})")
