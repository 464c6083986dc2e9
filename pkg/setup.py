from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-Python fallback only
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "prefhunter._ckernels",
                ["src/prefhunter/_ckernels.pyx"],
                extra_compile_args=["-O3"],
                optional=True,
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
