"""Build script for the optional compiled kernel core.

The package works without the extension (a numpy fallback is selected at
import time); set ADSTEXT_NO_EXT=1 to skip compilation entirely.
"""

import os

from setuptools import Extension, setup

extensions = []
if os.environ.get("ADSTEXT_NO_EXT") != "1":
    import numpy
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "adstext.kernels._core",
                ["src/adstext/kernels/_core.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )

setup(ext_modules=extensions)
