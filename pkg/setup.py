import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

ext_suffix = ".pyx" if cythonize else ".c"

extensions = [
    Extension(
        "gwa._kernels._core",
        sources=[f"src/gwa/_kernels/_core{ext_suffix}"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
    )
]

if cythonize:
    ext_modules = cythonize(extensions, compiler_directives={"language_level": "3"})
else:
    ext_modules = extensions

setup(ext_modules=ext_modules)
