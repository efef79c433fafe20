"""Builds the optional compiled kernel core.

The package works without the extension (a numpy fallback is selected at
import time); the build therefore tolerates a missing or failing compiler.
"""

from setuptools import setup, Extension

ext_modules = []
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "msc.kernels._core",
                ["src/msc/kernels/_core.pyx"],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
