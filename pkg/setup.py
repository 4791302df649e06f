from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-Python install; the engine falls back automatically
    ext_modules = []
else:
    ext_modules = cythonize(
        [Extension("bftperf._kernel", ["src/bftperf/_kernel.pyx"], extra_compile_args=["-O3"])],
        compiler_directives={"language_level": 3},
    )

setup(ext_modules=ext_modules)
