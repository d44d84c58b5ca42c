"""Build script: compiles the Taylor-jet kernel extension when Cython and a C
compiler are available; the package falls back to the pure-Python kernel at
import time if the extension is missing."""

from setuptools import setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        ["src/ccdesign/_native.pyx"],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
