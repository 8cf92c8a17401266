"""
Numerical kernels: linear algebra, decomposition, adapters and accounting.
"""
