"""Build the optional Cython kernels.

The package works without them (a numpy fallback is selected at import),
so a missing compiler or Cython only costs speed.
"""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("TORUSFLOW_NO_EXT", "") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "torusflow._kernels._ckernels",
                    ["src/torusflow/_kernels/_ckernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={
                "language_level": "3",
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
                "initializedcheck": False,
            },
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
