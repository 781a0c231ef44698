# Builds the optional compiled kernels. Without a working compiler the
# package still installs and falls back to the numpy kernels at import time.
import os

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pragma: no cover
    cythonize = None

ext_modules = []
if cythonize is not None and not os.environ.get("PAIRSSL_NO_EXT"):
    ext_modules = cythonize(
        [
            Extension(
                "pairssl._kernels",
                ["src/pairssl/_kernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3", "-ffp-contract=off"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
