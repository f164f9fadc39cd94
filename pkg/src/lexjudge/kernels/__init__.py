"""Kernel backend selection.

Prefers the compiled backend (built from _fast.pyx) when importable and
falls back to the pure-Python reference otherwise. Both are
bit-identical, so selection never changes results, only speed. Force a
backend with LEXJUDGE_KERNELS=fast|reference.
"""

import os

from . import reference as _reference

try:
    from . import _fast as _fast  # type: ignore[attr-defined]
except ImportError:
    _fast = None

_EXPORTS = [
    "dot", "norm", "cosine", "cosine_scores", "maxpool", "affine",
    "softmax_inplace", "head_backward", "pair_scores", "gather_rows",
    "gather_mean", "scatter_add", "add_scaled", "scale_inplace",
    "weighted_sum_rows",
]


def _select():
    forced = os.environ.get("LEXJUDGE_KERNELS", "").strip().lower()
    if forced in ("", "auto"):
        return _fast if _fast is not None else _reference
    if forced in ("fast", "compiled", "cython"):
        if _fast is None:
            raise ImportError(
                "LEXJUDGE_KERNELS=fast but the compiled kernels are not built; "
                "run `python setup.py build_ext --inplace` or reinstall"
            )
        return _fast
    if forced in ("reference", "py", "python", "pure"):
        return _reference
    raise ValueError(f"unknown LEXJUDGE_KERNELS value: {forced!r}")


_impl = _select()
BACKEND = _impl.BACKEND_NAME

for _name in _EXPORTS:
    globals()[_name] = getattr(_impl, _name)

__all__ = _EXPORTS + ["BACKEND", "available_backends"]


def available_backends():
    """Importable kernel modules keyed by backend name."""
    out = {"reference": _reference}
    if _fast is not None:
        out["fast"] = _fast
    return out
