"""Backend selection for the rollout/BPTT kernels.

The compiled extension is used when it imports; otherwise, or when the
environment variable ``SRNNPB_PURE_PYTHON`` is set to a non-empty value,
the numpy implementation is used.  Both expose ``forward`` and
``backward`` with identical signatures.
"""

import os

from . import _kernels_py

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def _select():
    if os.environ.get("SRNNPB_PURE_PYTHON") or _ckernels is None:
        return _kernels_py, "python"
    return _ckernels, "cython"


_impl, BACKEND = _select()


def get_backend(name: str | None = None):
    """Return a kernel module by name (``"cython"``/``"python"``), or the active one."""
    if name is None:
        return _impl
    if name == "python":
        return _kernels_py
    if name == "cython":
        if _ckernels is None:
            raise ImportError("compiled kernels are not built; run `pip install -e .`")
        return _ckernels
    raise ValueError(f"unknown backend {name!r}")


def forward(w_x, w_h, b, w_out, b_out, pb, T):
    return _impl.forward(w_x, w_h, b, w_out, b_out, pb, T)


def backward(w_x, w_h, w_out, P, z, gates, c, h, d_x, weights=True):
    return _impl.backward(w_x, w_h, w_out, P, z, gates, c, h, d_x, weights)
