import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("CELLCYCLE_NO_EXT", "") != "1":
    try:
        import numpy
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "cellcycle._ckernels",
                    ["src/cellcycle/_ckernels.pyx"],
                    include_dirs=[numpy.get_include()],
                    extra_compile_args=["-O3", "-ffp-contract=off"],
                )
            ],
            language_level=3,
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
