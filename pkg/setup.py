"""Build script for the optional compiled kernel.

The package works without the extension (a NumPy fallback is selected at
import time); building it speeds up the sampler's inner loop considerably.
"""

import os

import numpy
from setuptools import setup
from setuptools.extension import Extension

try:
    from Cython.Build import cythonize
except ImportError:  # pragma: no cover - source dists ship the .pyx only
    cythonize = None

extensions = []
if cythonize is not None and os.path.exists("src/cohortsem/_kernels/_ck.pyx"):
    extensions = cythonize(
        [
            Extension(
                "cohortsem._kernels._ck",
                sources=["src/cohortsem/_kernels/_ck.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )

setup(ext_modules=extensions)
