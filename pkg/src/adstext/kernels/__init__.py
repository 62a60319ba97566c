"""Hot-kernel backend selection.

The compiled Cython core is preferred when it was built; otherwise the
numpy fallback is used. ADSTEXT_KERNELS=py forces the fallback and
ADSTEXT_KERNELS=c fails loudly if the extension is missing. Dense matrix
products are not covered here: both backends leave those to numpy's BLAS.
"""

import os

from adstext.errors import AdstextError

_requested = os.environ.get("ADSTEXT_KERNELS", "auto")
if _requested not in ("auto", "c", "py"):
    raise AdstextError(f"ADSTEXT_KERNELS must be auto|c|py, got {_requested!r}")

if _requested == "py":
    from adstext.kernels import _ref as _impl

    BACKEND = "py"
else:
    try:
        from adstext.kernels import _core as _impl  # type: ignore[attr-defined]

        BACKEND = "c"
    except ImportError:
        if _requested == "c":
            raise AdstextError(
                "compiled kernel core requested but not built; "
                "run `python setup.py build_ext --inplace` or install the package"
            ) from None
        from adstext.kernels import _ref as _impl

        BACKEND = "py"

softmax_rows = _impl.softmax_rows
softmax_rows_backward = _impl.softmax_rows_backward
log_softmax_rows = _impl.log_softmax_rows
log_softmax_rows_backward = _impl.log_softmax_rows_backward
layernorm_rows = _impl.layernorm_rows
layernorm_rows_backward = _impl.layernorm_rows_backward
gelu = _impl.gelu
gelu_backward = _impl.gelu_backward
adamw_update = _impl.adamw_update
min_image_distance_matrix = _impl.min_image_distance_matrix

__all__ = [
    "BACKEND",
    "softmax_rows",
    "softmax_rows_backward",
    "log_softmax_rows",
    "log_softmax_rows_backward",
    "layernorm_rows",
    "layernorm_rows_backward",
    "gelu",
    "gelu_backward",
    "adamw_update",
    "min_image_distance_matrix",
]
