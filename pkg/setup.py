import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    # Pure-Python install still works: the package falls back to the
    # vectorized numpy kernels at import time.
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "mvscene._kernels._native",
                ["src/mvscene/_kernels/_native.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules)
