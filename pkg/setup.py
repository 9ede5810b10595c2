"""Build script: compiles the optional Cython kernel extension.

If the toolchain is unavailable the build falls back to a pure-python
(numpy) install; minet.backend selects the lane at import time.
"""
import sys

from setuptools import Extension, setup

try:
    import numpy
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "minet._kernels",
                ["src/minet/_kernels.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    extensions = []
    print("cython/numpy not available at build time; installing without "
          "compiled kernels", file=sys.stderr)

setup(ext_modules=extensions)
