"""
Command-line subcommand handlers.
"""
