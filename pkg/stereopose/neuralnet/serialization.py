"""
Text container for trained networks.

A model file is a single JSON object::

    {
      "format_version": 1,
      "config": {... MlpConfig ...},
      "tensors": {"stem.linear.weight": {"shape": [...], "data": [...]}, ...},
      "buffers": {...},
      "metadata": {...}
    }

Tensors are stored as their shape and their row-major flattened float64
values. Keys are sorted and floats are written with their shortest round-trip
representation, so identical models give byte-identical files.
"""
import hashlib
import json
from pathlib import Path
from typing import Any, Dict, Tuple

import numpy as np

from stereopose.neuralnet.network import MlpConfig, MlpModel

FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    """Raised when a model file cannot be interpreted"""


def _encode_tensors(tensors):
    return {
        name: {
            "shape": list(value.shape),
            "data": np.asarray(value, dtype=float).ravel().tolist(),
        }
        for name, value in tensors.items()
    }


def _decode_tensors(data):
    return {
        name: np.array(entry["data"], dtype=float).reshape(entry["shape"])
        for name, entry in data.items()
    }


def model_to_dict(model: MlpModel, metadata=None) -> Dict[str, Any]:
    """Represent a model and optional metadata as a JSON-compatible
    dictionary"""
    return {
        "format_version": FORMAT_VERSION,
        "config": model.config.to_dict(),
        "tensors": _encode_tensors(model.params),
        "buffers": _encode_tensors(model.buffers),
        "metadata": dict(metadata or {}),
    }


def model_from_dict(data) -> Tuple[MlpModel, Dict[str, Any]]:
    """Inverse of :func:`model_to_dict`

    Raises:
        ModelFormatError: if the data does not describe a valid model
    """
    try:
        version = data["format_version"]
        if version != FORMAT_VERSION:
            raise ModelFormatError(
                "Unsupported model format version %r" % version
            )
        config = MlpConfig.from_dict(data["config"])
        model = MlpModel(config, _decode_tensors(data["tensors"]),
                         _decode_tensors(data["buffers"]))
    except (KeyError, TypeError, ValueError) as error:
        if isinstance(error, ModelFormatError):
            raise
        raise ModelFormatError("Invalid model data: %s" % error) from error
    return model, dict(data.get("metadata") or {})


def dumps(model: MlpModel, metadata=None) -> str:
    """Serialize a model into the text format"""
    return json.dumps(model_to_dict(model, metadata), sort_keys=True,
                      separators=(",", ":"), allow_nan=False)


def loads(text) -> Tuple[MlpModel, Dict[str, Any]]:
    """Deserialize a model from the text format"""
    try:
        data = json.loads(text)
    except ValueError as error:
        raise ModelFormatError("Model file is not valid JSON: %s"
                               % error) from error
    return model_from_dict(data)


def save_model(path, model: MlpModel, metadata=None):
    """Write a model and its metadata to a file"""
    Path(path).write_text(dumps(model, metadata) + "\n", encoding="utf-8")


def load_model(path) -> Tuple[MlpModel, Dict[str, Any]]:
    """Read a model and its metadata from a file

    Raises:
        OSError: if the file cannot be read
        ModelFormatError: if the file does not contain a valid model
    """
    return loads(Path(path).read_text(encoding="utf-8"))


def fingerprint(model: MlpModel) -> str:
    """SHA-256 digest of the serialized parameters and buffers of a model"""
    return hashlib.sha256(dumps(model).encode("utf-8")).hexdigest()
