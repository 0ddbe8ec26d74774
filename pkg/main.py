#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
NSync 主程序
未安装包时从源码目录直接运行命令行

用法: python main.py mc --config configs/experiment.toml -v
"""

import os
import sys

# 添加src目录到Python路径
sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), 'src'))

from nsync.cli import main  # noqa: E402

if __name__ == "__main__":
    sys.exit(main())
