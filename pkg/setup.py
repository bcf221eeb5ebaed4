"""Builds the optional compiled co-occurrence kernel.

The package works without the extension (a numpy fallback is selected at
import time); set GFD_SKIP_EXT=1 to skip compilation entirely.
"""

import os

from setuptools import Extension, setup


def extensions():
    if os.environ.get("GFD_SKIP_EXT") == "1":
        return []
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError:
        return []
    ext = Extension(
        "gfd.analysis._glcm_cy",
        sources=["src/gfd/analysis/_glcm_cy.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], language_level=3)


setup(ext_modules=extensions())
