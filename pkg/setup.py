import sys

from setuptools import setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "nvhyperfine._kernels",
                ["src/nvhyperfine/_kernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3", "-fcx-limited-range"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    print("Cython or numpy missing: installing pure-Python kernels only", file=sys.stderr)

setup(ext_modules=ext_modules)
