"""Multi-product parabolic propagators"""
__version__ = "1.0.0"
