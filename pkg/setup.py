from setuptools import Extension, setup
from Cython.Build import cythonize
import numpy as np

ext_modules = cythonize(
    [
        Extension(
            "mapaware._ckernels",
            ["src/mapaware/_ckernels.pyx"],
            include_dirs=[np.get_include()],
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        )
    ],
    compiler_directives={"language_level": "3"},
)

setup(ext_modules=ext_modules)
