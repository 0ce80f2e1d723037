"""Python bindings for the NR-DFERNet C++ core."""

import json

from . import _core
from ._core import (
    CLASS_NAMES,
    NEUTRAL,
    CheckpointError,
    ShapeError,
    apply_filter,
    attention_rollout,
    plan_snippets,
    uar,
    war,
)

__all__ = [
    "CLASS_NAMES",
    "NEUTRAL",
    "CheckpointError",
    "Model",
    "ShapeError",
    "apply_filter",
    "attention_rollout",
    "default_config",
    "generate",
    "plan_snippets",
    "uar",
    "war",
]


def default_config(which="micro"):
    """Model configuration dict: "full", "micro" or "gradient_check"."""
    return json.loads(_core.default_config_json(which))


def generate(spec=None, count=None):
    """Synthetic sequences as dicts with frames [n, 3, H, W], label, source_id, mask and fold."""
    spec = dict(spec or {})
    if count is None:
        count = spec.get("sequences", 70)
    return _core.generate(json.dumps(spec), count)


class Model:
    """Float32 network in eval mode."""

    def __init__(self, config=None, *, _core_model=None):
        if _core_model is None:
            _core_model = _core.Model(json.dumps(config if config is not None else default_config()))
        self._m = _core_model

    @classmethod
    def load(cls, path):
        return cls(_core_model=_core.Model.load(str(path)))

    def forward(self, frames):
        """frames [B, n, 3, H, W] -> dict with logits, class_token and per-layer attention."""
        return self._m.forward(frames)

    def save(self, path):
        self._m.save(str(path))

    @property
    def config(self):
        return json.loads(self._m.config_json())

    @property
    def parameter_count(self):
        return self._m.parameter_count()

    def set_use_dct(self, enabled):
        self._m.set_use_dct(enabled)

    def set_use_dsf(self, enabled):
        self._m.set_use_dsf(enabled)
