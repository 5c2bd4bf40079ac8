"""
Setup configuration for the Non-Rigid Shape Reconstructor.

This is a minimal setup.py for backward compatibility.
Configuration lives in pyproject.toml following PEP 517/518.
"""

from setuptools import setup

# Configuration is in pyproject.toml
# This file exists for tools that don't support PEP 517
setup()
