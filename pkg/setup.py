"""Build script for the optional compiled kernel backend.

The package is pure Python by default; when Cython and a C compiler are
available, lexjudge.kernels._fast is built and preferred at import time.
Set LEXJUDGE_PURE=1 to skip the extension entirely.
"""

import os

from setuptools import setup

ext_modules = []
if os.environ.get("LEXJUDGE_PURE") != "1":
    try:
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "lexjudge.kernels._fast",
                    ["src/lexjudge/kernels/_fast.pyx"],
                    # -ffp-contract=off keeps doubles bit-identical to the
                    # pure-Python reference backend (no FMA contraction).
                    extra_compile_args=["-O3", "-ffp-contract=off"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
