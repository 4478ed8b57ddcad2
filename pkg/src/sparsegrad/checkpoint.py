"""Self-describing text checkpoints for named parameter tensors.

A checkpoint is a single JSON document:

    {
      "format": "sparsegrad-checkpoint",
      "version": 1,
      "config": { ... experiment config as emitted by to_dict() ... },
      "tensors": {
        "<name>": {"shape": [d0, d1, ...], "data": [flat values, C order]}
      },
      "buffers": { same layout; non-trainable state such as running stats }
    }

Values are stored as JSON numbers.  Python serializes a float with its
shortest round-tripping repr and parses it back to the identical bits, so
finite float64 data survives save/load exactly.  Non-finite values are
rejected at save time; they have no JSON spelling and a checkpoint holding
one would be unreadable by conforming parsers anyway.

The writer sorts keys and uses fixed separators, so saving the same
parameters and config twice produces byte-identical files.
"""

import json

import numpy as np

FORMAT_NAME = "sparsegrad-checkpoint"
FORMAT_VERSION = 1


def _pack(named: dict, section: str) -> dict:
    out = {}
    for name, value in named.items():
        arr = np.asarray(getattr(value, "data", value), dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"{section} {name!r} holds non-finite values; "
                             "refusing to write an unreadable checkpoint")
        out[name] = {"shape": list(arr.shape),
                     "data": [float(v) for v in arr.ravel()]}
    return out


def _unpack(doc: dict, section: str, path: str) -> dict:
    out = {}
    for name, entry in doc.get(section, {}).items():
        shape = tuple(entry["shape"])
        arr = np.array(entry["data"], dtype=np.float64)
        if arr.size != int(np.prod(shape, dtype=np.int64)):
            raise ValueError(f"{path}: {section} entry {name!r} has "
                             f"{arr.size} values but shape {shape}")
        out[name] = arr.reshape(shape)
    return out


def save_checkpoint(path: str, params: dict, config: dict,
                    buffers: dict | None = None) -> None:
    """Write named tensors plus a config dict to ``path``.

    ``params`` maps names to Tensors or arrays; anything np.asarray
    accepts works.  ``config`` must be JSON-serializable.  ``buffers``
    carries non-trainable state the model needs at eval time.
    """
    doc = {"format": FORMAT_NAME, "version": FORMAT_VERSION,
           "config": config, "tensors": _pack(params, "tensor"),
           "buffers": _pack(buffers or {}, "buffer")}
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_checkpoint(path: str) -> tuple:
    """Read a checkpoint: (config dict, {name: array}, {name: array})."""
    with open(path) as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict) or doc.get("format") != FORMAT_NAME:
        raise ValueError(f"{path}: not a {FORMAT_NAME} file")
    if doc.get("version") != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version "
                         f"{doc.get('version')!r}")
    return (doc["config"], _unpack(doc, "tensors", path),
            _unpack(doc, "buffers", path))
