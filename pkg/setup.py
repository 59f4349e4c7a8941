import numpy
from Cython.Build import cythonize
from setuptools import Extension, setup

extensions = [
    Extension(
        "finparse.kernels._native",
        ["src/finparse/kernels/_native.pyx"],
        include_dirs=[numpy.get_include()],
        # fp-contract off: the pure-numpy fallback is the bit-exact reference,
        # so FMA contraction must not change rounding.
        extra_compile_args=["-O3", "-ffp-contract=off"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
]

setup(
    ext_modules=cythonize(
        extensions,
        compiler_directives={"language_level": "3"},
    )
)
