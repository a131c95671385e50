"""
Plain-text renderings of command results
"""
