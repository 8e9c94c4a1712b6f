"""Build script: compiles the optional native CRF kernel.

The package works without the extension (a numpy fallback is selected at
import time); set STYLESEG_SKIP_NATIVE=1 to skip compilation entirely.
"""

import os

from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("STYLESEG_SKIP_NATIVE"):
    try:
        import numpy as np
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "styleseg.postprocess._crf_native",
                    ["src/styleseg/postprocess/_crf_native.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            language_level=3,
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
