"""Kernel backend selection.

The compiled core (``msc.kernels._core``, Cython) is used when importable;
otherwise the pure-numpy fallback. Both expose the same four functions with
bit-identical results, so the choice only affects speed. Selection can be
forced with the ``MSC_KERNEL_BACKEND`` environment variable (``auto``,
``cy``, ``py``) or at runtime with :func:`set_backend`.
"""

from __future__ import annotations

import os

from . import numpy_backend

_BACKENDS = {"py": numpy_backend}
try:
    from . import _core  # type: ignore[attr-defined]

    _BACKENDS["cy"] = _core
except ImportError:
    _core = None

_active = None


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


def set_backend(name: str) -> None:
    global _active
    if name == "auto":
        name = "cy" if "cy" in _BACKENDS else "py"
    if name not in _BACKENDS:
        raise ValueError(f"kernel backend {name!r} not available (have {available_backends()})")
    _active = _BACKENDS[name]


def backend_name() -> str:
    return _active.name


set_backend(os.environ.get("MSC_KERNEL_BACKEND", "auto"))


def cell_group_order(keys):
    return _active.cell_group_order(keys)


def nn_within(qpos, kpos, eps):
    return _active.nn_within(qpos, kpos, eps)


def knn(pos, k):
    return _active.knn(pos, k)


def radius_neighbors(pos, scene, rho):
    return _active.radius_neighbors(pos, scene, rho)


def csr_row_sum(values, flat, counts):
    return _active.csr_row_sum(values, flat, counts)
