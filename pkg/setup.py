import os

import numpy as np
from setuptools import Extension, setup

extensions = []
if not os.environ.get("VFLOW_NO_EXT"):
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "vflow._mixlogistic_ext",
                ["src/vflow/_mixlogistic_ext.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=extensions)
