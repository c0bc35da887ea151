"""Build script for the compiled recursion kernels.

The extension is optional: if the C toolchain or Cython is unavailable the
install still succeeds and the package falls back to the pure-Python
kernels in ``tailrisk._core._pyref`` (selected at import time).
"""

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    """Try to build the extension; warn and continue on failure."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # toolchain missing, etc.
            self._warn(exc)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            self._warn(exc)

    @staticmethod
    def _warn(exc):
        import warnings

        warnings.warn(
            "building the compiled tailrisk kernels failed (%s); "
            "falling back to the pure-Python implementation" % (exc,)
        )


def extensions():
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError as exc:
        import warnings

        warnings.warn("Cython/numpy unavailable (%s); skipping compiled kernels" % (exc,))
        return []
    return cythonize(
        [
            Extension(
                "tailrisk._core._recursions",
                ["src/tailrisk/_core/_recursions.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )


setup(ext_modules=extensions(), cmdclass={"build_ext": OptionalBuildExt})
