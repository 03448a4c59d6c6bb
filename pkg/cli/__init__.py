"""
Command line entry point and pipeline stages
"""
