"""
projlab subcommands
"""
