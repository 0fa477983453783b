import os

from setuptools import Extension, setup

# The compiled kernels are optional: the package falls back to
# fhci._pykernel when fhci._core is absent. Set FHCI_PURE_PYTHON=1 to
# skip the extension build entirely.
ext_modules = []
if os.environ.get("FHCI_PURE_PYTHON") != "1":
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    "fhci._core",
                    ["src/fhci/_core.pyx"],
                    # -ffp-contract=off keeps the C arithmetic bit-compatible
                    # with the pure-Python twin (no FMA contraction).
                    extra_compile_args=["-O3", "-ffp-contract=off"],
                )
            ],
            compiler_directives={
                "language_level": 3,
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
                "initializedcheck": False,
            },
        )

setup(ext_modules=ext_modules)
