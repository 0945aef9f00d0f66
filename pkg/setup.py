"""Build script for the compiled matmul kernel.

The extension is optional at runtime: suffixdrop.kernels falls back to a
bit-identical NumPy implementation when the module is missing.
"""

from setuptools import Extension, setup
from Cython.Build import cythonize

extensions = [
    Extension(
        "suffixdrop._matmul",
        sources=["src/suffixdrop/_matmul.pyx"],
        extra_compile_args=["-O3"],
    )
]

setup(
    ext_modules=cythonize(
        extensions,
        language_level=3,
        compiler_directives={
            "boundscheck": False,
            "wraparound": False,
            "initializedcheck": False,
        },
    )
)
