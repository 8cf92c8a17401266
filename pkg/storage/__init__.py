"""
Tensor archives, model checkpoints and report files.
"""
