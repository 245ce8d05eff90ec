"""Python bindings for the mld latent motion diffusion library."""

import json

from ._mld import (
    ConfigError,
    FormatError,
    Generator,
    IncompatibleError,
    MldError,
    NoiseSchedule,
    ShapeError,
    cfg_combine,
    diversity,
    fid,
    joint_errors,
    load_checkpoint,
    load_tensor,
    multimodality,
    procrustes_align,
    retrieval_metrics,
    run_cli,
    save_checkpoint,
    save_tensor,
)
from . import _mld


def default_config():
    return json.loads(_mld.default_config())


def resolve_config(config=None, overrides=()):
    """Defaults overlaid with `config` (a dict) and "a.b=value" overrides, validated."""
    text = json.dumps(config) if config else ""
    return json.loads(_mld.resolve_config(text, list(overrides)))


def synth_corpus(out, config=None):
    return _mld.synth_corpus(json.dumps(resolve_config(config)), str(out))


def train_vae(data, out, config=None):
    """Trains a VAE on the corpus at `data` and writes its checkpoint; returns per-epoch logs."""
    return _mld.train_vae(json.dumps(resolve_config(config)), str(data), str(out))


def train_diffusion(data, vae, out, config=None):
    return _mld.train_diffusion(json.dumps(resolve_config(config)), str(data), str(vae), str(out))
