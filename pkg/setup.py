"""Build script: compiles the optional Cython kernel extension.

Set BROKENRAY_NO_EXT=1 to skip the extension entirely; the package then
runs on the pure-numpy kernel fallback.
"""

import os

from setuptools import setup

ext_modules = []
if not os.environ.get("BROKENRAY_NO_EXT"):
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext = Extension(
            "brokenray._core._kernels",
            ["src/brokenray/_core/_kernels.pyx"],
            include_dirs=[np.get_include()],
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            extra_compile_args=["-O3"],
        )
        ext_modules = cythonize([ext], language_level="3")
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
