from setuptools import setup

# Compatibility shim for tools that still call setup.py; the build (hatchling),
# dependencies and the `shredlab` console script are declared in pyproject.toml
setup(name="shredlab")
