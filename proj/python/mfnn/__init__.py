"""Python access to the mfnn experiment runner and oracles."""

import json as _json

from . import _mfnn
from ._mfnn import ConfigError, analytic_y0_decoupled, presets

__version__ = _mfnn.__version__

__all__ = [
    "ConfigError",
    "analytic_y0_decoupled",
    "compare",
    "normalize_config",
    "presets",
    "riccati_lq",
    "run",
]


def normalize_config(config):
    """Validated config with every default filled in."""
    return _json.loads(_mfnn.normalize_config(_json.dumps(config)))


def run(config, out_dir, threads=1):
    """Run an experiment config (a dict) and return the report as a dict."""
    return _json.loads(_mfnn.run_config(_json.dumps(config), str(out_dir), threads))


def compare(a, b):
    """L2 / sup gaps between two CSV files or run directories."""
    return _json.loads(_mfnn.compare(str(a), str(b)))


def riccati_lq(params=None, n_steps=20):
    return _mfnn.riccati_lq(_json.dumps(params or {}), n_steps)
