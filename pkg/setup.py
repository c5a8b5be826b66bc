"""Build script for the optional compiled kernel core.

The package works without the extension: pidm.backend falls back to the
numpy kernels when the compiled module is missing, so a failed compile
only costs speed, not functionality.
"""
import sys

from setuptools import setup


def _extensions():
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError as exc:
        print(f"skipping compiled kernels ({exc})", file=sys.stderr)
        return []
    return cythonize(
        ["src/pidm/_kernels_cy.pyx"],
        compiler_directives={
            "language_level": 3,
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
        include_path=[np.get_include()],
    )


try:
    ext_modules = _extensions()
except Exception as exc:  # noqa: BLE001 - any build failure degrades to the numpy path
    print(f"skipping compiled kernels ({exc})", file=sys.stderr)
    ext_modules = []

kwargs = {}
if ext_modules:
    import numpy as np

    for ext in ext_modules:
        ext.include_dirs.append(np.get_include())
        if not sys.platform.startswith("win"):
            ext.extra_compile_args = ["-O3"]
    kwargs["ext_modules"] = ext_modules

setup(**kwargs)
