"""Build the optional Cython kernels; the package falls back to pure Python if this fails."""
import os
import sys

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if os.environ.get("EMHASH_NO_EXT") != "1":
    try:
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "emhash._ckernels",
                    ["src/emhash/_ckernels.pyx"],
                    include_dirs=[np.get_include()],
                    language="c++",
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except Exception as exc:  # pragma: no cover - build environment dependent
        print(f"warning: building without Cython kernels ({exc})", file=sys.stderr)

setup(ext_modules=ext_modules)
