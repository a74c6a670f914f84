import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

extensions = [
    Extension(
        "sbgen._chain",
        ["src/sbgen/_chain.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=["-O2", "-fno-fast-math", "-ffp-contract=off"],
    )
]

setup(ext_modules=cythonize(extensions, compiler_directives={"language_level": "3"}))
