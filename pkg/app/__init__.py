"""findep - 动态离散选择模型的有限依赖两步估计"""

__version__ = "0.1.0"
