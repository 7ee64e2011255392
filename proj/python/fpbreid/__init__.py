"""Python bindings for the fpb re-identification library."""

import json as _json

from . import _core

__version__ = _core.__version__


def _dump(config):
    if config is None:
        return ""
    return config if isinstance(config, str) else _json.dumps(config)


def default_config():
    return _json.loads(_core.default_config())


def load_config(path="", overrides=()):
    """Defaults, then the optional JSON file, then ``dotted.key=value`` overrides."""
    return _json.loads(_core.load_config(path, list(overrides)))


def lr_at(epoch, config=None):
    return _core.lr_at(epoch, _dump(config))


def generate_toy(out_dir, config=None):
    """Writes the synthetic dataset and returns its index as a dict."""
    return _json.loads(_core.generate_toy(str(out_dir), _dump(config)))


def evaluate(dist, q_pids, q_camids, g_pids, g_camids, max_rank=50):
    """Returns (mAP, cmc list, evaluated query count)."""
    return _core.evaluate(dist, list(q_pids), list(q_camids), list(g_pids), list(g_camids), max_rank)


def run_cli(*args):
    """Runs one ``fpb`` command in-process; returns (exit code, stdout, stderr)."""
    return _core.run_cli([str(a) for a in args])


class Model:
    def __init__(self, config=None):
        self._m = _core.Model(_dump(config))

    def features(self, images):
        """L2-normalised inference features for a [B,3,H,W] float array."""
        return self._m.features(images)

    def load_checkpoint(self, path):
        self._m.load_checkpoint(str(path))

    def param_counts(self):
        return _json.loads(self._m.param_counts())

    @property
    def inference_dim(self):
        return self._m.inference_dim
