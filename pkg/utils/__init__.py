"""
Configuration dataclasses, report models, validators and CLI message text.
"""
