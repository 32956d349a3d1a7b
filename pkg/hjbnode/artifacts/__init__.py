"""
Helpers for status output and for writing the CSV tables and SVG figures of training runs
"""
