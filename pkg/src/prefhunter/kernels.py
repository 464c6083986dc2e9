"""Backend selection for the numerical inner loops.

The compiled extension is preferred; set ``PREFHUNTER_PURE_PYTHON=1`` to force
the numpy fallback (the benchmark and the twin tests use :func:`load`
directly to get both).
"""
import importlib
import os

BACKENDS = ("compiled", "python")


def load(name):
    if name == "compiled":
        return importlib.import_module("prefhunter._ckernels")
    if name == "python":
        return importlib.import_module("prefhunter._pykernels")
    raise ValueError(f"unknown kernel backend {name!r}")


def available():
    found = []
    for name in BACKENDS:
        try:
            load(name)
        except ImportError:
            continue
        found.append(name)
    return found


def _select():
    if os.environ.get("PREFHUNTER_PURE_PYTHON"):
        return "python", load("python")
    try:
        return "compiled", load("compiled")
    except ImportError:
        return "python", load("python")


BACKEND, _impl = _select()

bellman_occupancy = _impl.bellman_occupancy
sample_episodes = _impl.sample_episodes
td_occupancy = _impl.td_occupancy
policy_returns = _impl.policy_returns
