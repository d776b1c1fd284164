import numpy
from Cython.Build import cythonize
from setuptools import Extension, find_packages, setup

extensions = [
    Extension(
        "asyncsgd.engine._kernels",
        ["src/asyncsgd/engine/_kernels.pyx"],
        include_dirs=[numpy.get_include()],
        extra_compile_args=["-O3"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
]

# name/version/layout are repeated here so legacy (pre-PEP-621) setuptools
# paths build the src layout correctly
setup(
    name="asyncsgd",
    version="0.1.0",
    package_dir={"": "src"},
    packages=find_packages("src"),
    ext_modules=cythonize(extensions, language_level=3),
)
