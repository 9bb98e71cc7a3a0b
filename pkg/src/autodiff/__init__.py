"""
Reverse-mode automatic differentiation over rank-4 NumPy tensors
"""
