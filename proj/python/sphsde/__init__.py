"""Python bindings for the sphsde C++ library."""

import json

from ._core import *  # noqa: F401,F403
from ._core import __version__, preset_json, run_ensemble_json


def preset(name):
    """Config of a named preset as a dict."""
    return json.loads(preset_json(name))


def run_ensemble(config):
    """Run an ensemble from a config dict (or preset name); returns the result dict."""
    if isinstance(config, str):
        config = preset(config)
    return json.loads(run_ensemble_json(json.dumps(config)))


def empirical_density(points):
    """Density grid of the points on the standard sphere partition, as a dict."""
    from ._core import empirical_density_json

    return json.loads(empirical_density_json(points))
