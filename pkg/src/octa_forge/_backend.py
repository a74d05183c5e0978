"""Pick the compiled kernels when available, the numpy fallback otherwise.

Set ``OCTA_FORGE_BACKEND=python`` to force the fallback, or ``=compiled``
to fail loudly when the extension is missing.
"""
import os

from . import _fallback

_choice = os.environ.get("OCTA_FORGE_BACKEND", "auto").lower()

if _choice == "python":
    kernels = _fallback
else:
    try:
        from . import _kernels as kernels
    except ImportError:
        if _choice == "compiled":
            raise
        kernels = _fallback

BACKEND = "compiled" if kernels is not _fallback else "python"


def get_kernels(name=None):
    """Return the kernel module named ``name`` ("compiled"/"python") or the active one."""
    if name is None:
        return kernels
    if name == "python":
        return _fallback
    if name == "compiled":
        from . import _kernels
        return _kernels
    raise ValueError(f"unknown backend {name!r}")
