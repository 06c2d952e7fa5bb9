# core/__init__.py
"""Grids, symbols, Weyl quantization, multi-product propagators and experiment drivers."""
