# utils/__init__.py
"""Result files and runtime helpers."""
