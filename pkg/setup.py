import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

# The compiled kernels are optional: the package falls back to the numpy
# implementations in irr.kernels._pykernels when the extension is absent.
ext_modules = []
if cythonize is not None:
    ext_modules = cythonize(
        [
            Extension(
                "irr.kernels._ckernels",
                ["src/irr/kernels/_ckernels.pyx"],
                extra_compile_args=["-O3"],
                include_dirs=[numpy.get_include()],
            )
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules)
