"""Build the optional Cython core; the package falls back to numpy if it is missing."""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("DOBRUSHIN_GIBBS_NO_EXT", "") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "dobrushin_gibbs._ckernels",
                    ["src/dobrushin_gibbs/_ckernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={
                "language_level": "3",
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
            },
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
