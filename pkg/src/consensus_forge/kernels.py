"""Backend selection for the numerical kernels.

The compiled extension (``_kernels``) is used when it was built; otherwise
the NumPy implementations in ``_kernels_py`` are used.  Setting
``CONSENSUS_FORGE_PURE=1`` forces the fallback.
"""

import importlib
import os

__all__ = ["BACKEND", "get_backend", "available_backends",
           "inverse_row_norms", "region_slack_grid", "integrate_agents"]


def get_backend(name):
    """Return the kernel module for ``"compiled"`` or ``"python"``."""
    if name == "compiled":
        return importlib.import_module("._kernels", __package__)
    if name == "python":
        return importlib.import_module("._kernels_py", __package__)
    raise ValueError(f"unknown kernel backend {name!r}")


def available_backends():
    names = ["python"]
    try:
        get_backend("compiled")
    except ImportError:
        pass
    else:
        names.insert(0, "compiled")
    return names


if os.environ.get("CONSENSUS_FORGE_PURE", "") not in ("", "0"):
    _impl = get_backend("python")
else:
    try:
        _impl = get_backend("compiled")
    except ImportError:
        _impl = get_backend("python")

BACKEND = "compiled" if _impl.__name__.endswith("._kernels") else "python"

inverse_row_norms = _impl.inverse_row_norms
region_slack_grid = _impl.region_slack_grid
integrate_agents = _impl.integrate_agents
