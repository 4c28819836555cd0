import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("ADAMPC_NO_EXT") != "1":
    try:
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [Extension("adampc.qp._core", ["src/adampc/qp/_core.pyx"])],
            language_level=3,
        )
    except ImportError:
        # Pure-Python fallback is selected at import time; the compiled
        # kernel is an optional accelerator.
        ext_modules = []

setup(ext_modules=ext_modules)
