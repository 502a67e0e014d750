"""Build script.

The training loops have a compiled backend (uniq_mdp.kernels._ck). If Cython
or a C compiler is unavailable the build still succeeds and the package falls
back to the pure-numpy backend at import time.
"""

import sys

from setuptools import setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools.extension import Extension

    ext_modules = cythonize(
        [
            Extension(
                "uniq_mdp.kernels._ck",
                sources=["src/uniq_mdp/kernels/_ck.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3", "-std=c99"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except Exception as exc:  # pragma: no cover - depends on build host
    sys.stderr.write(f"warning: compiled kernels skipped ({exc}); using numpy backend\n")
    ext_modules = []

setup(ext_modules=ext_modules)
