import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "molone.kernels._impl_cy",
                ["src/molone/kernels/_impl_cy.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except ImportError:
    # Pure-python fallback is selected at import time, so a missing Cython
    # toolchain only costs speed, never functionality.
    ext_modules = []

setup(ext_modules=ext_modules)
