"""Builds the pybind11 extension; all metadata lives in pyproject.toml."""

from pybind11.setup_helpers import Pybind11Extension, build_ext
from setuptools import setup

setup(
    ext_modules=[
        Pybind11Extension(
            "handeye._core",
            ["python/bindings.cpp"],
            include_dirs=["include"],
            cxx_std=20,
        )
    ],
    cmdclass={"build_ext": build_ext},
)
