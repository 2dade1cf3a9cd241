import sys

from setuptools import Extension, setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize
except ImportError:  # pure-Python install
    pass
else:
    extra = [] if sys.platform == "win32" else ["-O2", "-ffp-contract=off"]
    ext_modules = cythonize(
        [Extension("modfed._kernels", ["src/modfed/_kernels.pyx"],
                   include_dirs=[np.get_include()], extra_compile_args=extra,
                   define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")])],
        language_level=3,
    )

setup(ext_modules=ext_modules)
