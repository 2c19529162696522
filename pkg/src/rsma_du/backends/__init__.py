"""Numerical kernels behind the solvers and the unfolded network.

Two interchangeable implementations of the same four kernels
(``pgd_run``, ``inner_pga``, ``du_forward``, ``du_backward``):

* ``_speedups`` — Cython extension, used when the build produced it;
* ``python_ref`` — pure-numpy reference, always available.

The compiled module is preferred at import time; set the environment
variable ``RSMA_DU_BACKEND=python`` (or call :func:`set_backend`) to force
the reference implementation, e.g. for debugging or benchmarking.
"""

from __future__ import annotations

import os

_active = None

_KERNELS = ("pgd_run", "inner_pga", "du_forward", "du_backward")


def _complete(mod) -> bool:
    return all(hasattr(mod, k) for k in _KERNELS)


def set_backend(name: str):
    """Select the kernel implementation: 'auto', 'compiled' or 'python'."""
    global _active
    if name == "auto":
        try:
            from . import _speedups as mod  # type: ignore[attr-defined]

            if not _complete(mod):
                raise ImportError("compiled backend is incomplete")
        except ImportError:
            from . import python_ref as mod  # type: ignore[no-redef]
    elif name in ("compiled", "cython"):
        from . import _speedups as mod  # type: ignore[attr-defined,no-redef]
    elif name in ("python", "numpy"):
        from . import python_ref as mod  # type: ignore[no-redef]
    else:
        raise ValueError(f"unknown backend {name!r}")
    _active = mod
    return mod


def get_backend():
    """Active kernel module, resolving the default on first use."""
    if _active is None:
        set_backend(os.environ.get("RSMA_DU_BACKEND", "auto"))
    return _active


def available_backends() -> list[str]:
    names = ["python"]
    try:
        from . import _speedups

        if _complete(_speedups):
            names.insert(0, "compiled")
    except ImportError:
        pass
    return names
