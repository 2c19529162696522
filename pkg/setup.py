"""Build script: compiles the optional Cython speedup kernels.

The package works without the extension (a pure-numpy backend is selected at
import time), so any failure here is reported but not fatal.
"""

import sys

from setuptools import setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize
    from setuptools.extension import Extension

    ext_modules = cythonize(
        [
            Extension(
                "rsma_du.backends._speedups",
                sources=["src/rsma_du/backends/_speedups.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except Exception as exc:  # pragma: no cover - build-environment dependent
    sys.stderr.write(
        "warning: Cython extension build skipped (%s); "
        "falling back to the pure-python backend\n" % exc
    )

setup(ext_modules=ext_modules)
