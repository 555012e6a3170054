"""Breast ultrasound tumor classification toolkit.

Light submodules (data, augment, metrics, intensity, synthetic) import
eagerly; the TensorFlow-backed ones (model, tune, erroranalysis, service)
load on first attribute access to keep ``import busclass`` fast.
"""

import importlib

__version__ = "0.1.0"

from . import augment, data, intensity, metrics, synthetic  # noqa: E402,F401

_LAZY = ("model", "tune", "erroranalysis", "service", "cli")


def __getattr__(name):
    if name in _LAZY:
        module = importlib.import_module(f".{name}", __name__)
        globals()[name] = module
        return module
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
