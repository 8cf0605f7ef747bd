"""Checkpoint persistence: config, vocabulary, and parameters in one file.

The container is a single .npz archive. Every parameter is stored as its raw
64-bit array under ``param/<name>``, so a save/load round trip is bit-exact.
A ``__meta__`` entry holds the JSON header: format version, the full model
config, the vocabulary in id order, parameter order, and L2 flags.
"""

from __future__ import annotations

import json
import os
import zipfile
from dataclasses import dataclass

import numpy as np

from .autodiff import ParameterStore
from .corpus import Vocabulary
from .episodic import ModelConfig
from .errors import CheckpointFormatError, CheckpointVersionError

FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    """Everything needed to evaluate or resume a trained model."""

    version: int
    config: ModelConfig
    vocab: Vocabulary
    store: ParameterStore


def save_checkpoint(store, cfg, vocab, path):
    """Write store, config, and vocabulary to ``path`` as one archive."""
    meta = json.dumps({
        "format": FORMAT_VERSION,
        "config": cfg.to_dict(),
        "vocab": list(vocab.tokens),
        "params": store.names(),
        "l2": store.l2_names(),
    })
    arrays = {f"param/{name}": store[name] for name in store.names()}
    with open(path, "wb") as handle:
        np.savez(handle, __meta__=np.array(meta), **arrays)


def load_checkpoint(path):
    """Read a checkpoint; on any failure no partial model escapes.

    Raises CheckpointFormatError for unreadable or incomplete files and
    CheckpointVersionError when the format version is not the one this
    build writes.
    """
    size = os.path.getsize(path) if os.path.exists(path) else 0
    try:
        with np.load(path, allow_pickle=False) as archive:
            if "__meta__" not in archive:
                raise CheckpointFormatError(f"{path}: no metadata entry (size {size} bytes)")
            try:
                meta = json.loads(str(archive["__meta__"]))
            except json.JSONDecodeError as exc:
                raise CheckpointFormatError(f"{path}: metadata is not JSON ({exc})") from exc
            version = meta.get("format")
            if version != FORMAT_VERSION:
                raise CheckpointVersionError(
                    f"{path}: format version {version}, this build reads {FORMAT_VERSION}"
                )
            store = ParameterStore()
            l2_names = set(meta["l2"])
            for name in meta["params"]:
                key = f"param/{name}"
                if key not in archive:
                    raise CheckpointFormatError(f"{path}: missing tensor {name!r}")
                values = archive[key]
                if values.dtype != np.float64:
                    raise CheckpointFormatError(
                        f"{path}: tensor {name!r} has dtype {values.dtype}, expected float64"
                    )
                store.add(name, values, l2=name in l2_names)
            config = ModelConfig.from_dict(meta["config"]).validate()
            vocab = Vocabulary.from_tokens(meta["vocab"])
    except (CheckpointFormatError, CheckpointVersionError):
        raise
    except (zipfile.BadZipFile, OSError, EOFError, ValueError, KeyError) as exc:
        raise CheckpointFormatError(
            f"{path}: unreadable checkpoint near byte {size} ({exc})"
        ) from exc
    return Checkpoint(version=version, config=config, vocab=vocab, store=store)
