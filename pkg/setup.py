#!/usr/bin/env python3
"""
Setup.py compatibility layer for lfi-node

Lets older pip versions and tools that expect setup.py install the package.
All actual configuration is in pyproject.toml.
"""

from setuptools import setup

if __name__ == "__main__":
    setup()
