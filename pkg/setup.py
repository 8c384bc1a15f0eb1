"""Optional build of the compiled counting kernels.

The package is fully functional without the extension: slicemend.kernels
falls back to a numpy implementation at import time. Building with Cython
and a C compiler enables the fast path; any build failure downgrades to a
pure-Python install instead of aborting.
"""

import sys

from setuptools import setup
from setuptools.errors import CCompilerError, ExecError, PlatformError


def extensions():
    try:
        from Cython.Build import cythonize
    except ImportError:
        return []
    from setuptools import Extension

    return cythonize(
        [
            Extension(
                "slicemend.kernels._bitset_cy",
                ["src/slicemend/kernels/_bitset_cy.pyx"],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )


try:
    setup(ext_modules=extensions())
except (CCompilerError, ExecError, PlatformError):
    sys.stderr.write("warning: compiled kernels unavailable, installing pure-Python fallback\n")
    setup(ext_modules=[])
