"""
Toy transformer, optimizer, synthetic tasks, pruning and the staged fine-tuning pipeline.
"""
