"""Model checkpoint container.

Single-file binary format, deterministic for identical inputs:

* line 1: magic ``ICUAE-CKPT1``
* line 2: one JSON object (sorted keys) with the model kind, the dims and
  activation kinds needed to rebuild the architecture, the seed it was
  initialized from, the flat parameter count, and any caller metadata
* rest: the flat parameter vector as little-endian float64 bytes, in
  ``model.parameters()`` order

Loading rebuilds the architecture from the header and scatters the payload
back into it, so a save/load round trip is bit-exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .dense import DenseAutoencoder, DenseLayer
from .errors import ConfigError, DataError
from .lstm import LstmCellParams, SeqAutoencoder
from .numeric import ActivationKind, flatten_arrays, write_flat

CHECKPOINT_MAGIC = b"ICUAE-CKPT1\n"

KIND_DENSE = "dense"
KIND_SEQ = "seq"


def model_kind(model) -> str:
    """Discriminator stored in the header, also used for CLI dispatch."""
    if isinstance(model, DenseAutoencoder):
        return KIND_DENSE
    if isinstance(model, SeqAutoencoder):
        return KIND_SEQ
    raise ConfigError(f"unsupported model type: {type(model).__name__}")


def _dense_header(model: DenseAutoencoder) -> dict:
    return {
        "input_dim": model.input_dim,
        "embedding_index": model.embedding_index,
        "layer_dims": [[l.in_dim, l.out_dim] for l in model.layers],
        "activations": [l.activation.value for l in model.layers],
    }


def _seq_header(model: SeqAutoencoder) -> dict:
    return {
        "num_features": model.num_features,
        "hidden_dim": model.hidden_dim,
        "out_activation": model.out_proj.activation.value,
    }


def save_checkpoint(model, path, seed: int,
                    extra: Optional[dict] = None) -> dict:
    """Write the container; returns the header that was stored."""
    kind = model_kind(model)
    flat = flatten_arrays(model.parameters())
    header = {"kind": kind, "seed": int(seed), "n_params": int(flat.size)}
    header.update(_dense_header(model) if kind == KIND_DENSE
                  else _seq_header(model))
    if extra:
        for key in extra:
            if key in header:
                raise ConfigError(f"extra metadata shadows header key: {key}")
        header.update(extra)
    encoded = json.dumps(header, sort_keys=True,
                         separators=(",", ":")).encode()
    with Path(path).open("wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(encoded)
        fh.write(b"\n")
        fh.write(flat.astype("<f8").tobytes())
    return header


def _rebuild_dense(header: dict) -> DenseAutoencoder:
    layers = []
    for (in_dim, out_dim), act in zip(header["layer_dims"],
                                      header["activations"]):
        layers.append(DenseLayer(weights=np.zeros((in_dim, out_dim)),
                                 bias=np.zeros(out_dim),
                                 activation=ActivationKind(act)))
    return DenseAutoencoder(layers=layers, input_dim=header["input_dim"],
                            embedding_index=header["embedding_index"])


def _rebuild_seq(header: dict) -> SeqAutoencoder:
    hidden = header["hidden_dim"]
    features = header["num_features"]

    def cell(in_dim: int) -> LstmCellParams:
        return LstmCellParams(weights_x=np.zeros((in_dim, 4 * hidden)),
                              weights_h=np.zeros((hidden, 4 * hidden)),
                              bias=np.zeros(4 * hidden))

    proj = DenseLayer(weights=np.zeros((hidden, features)),
                      bias=np.zeros(features),
                      activation=ActivationKind(header["out_activation"]))
    return SeqAutoencoder(encoder=cell(features), decoder=cell(hidden),
                          out_proj=proj, hidden_dim=hidden,
                          num_features=features)


@dataclass
class LoadedCheckpoint:
    model: object
    header: dict

    @property
    def kind(self) -> str:
        return self.header["kind"]

    @property
    def seed(self) -> int:
        return self.header["seed"]


def load_checkpoint(path) -> LoadedCheckpoint:
    path = Path(path)
    with path.open("rb") as fh:
        magic = fh.readline()
        if magic != CHECKPOINT_MAGIC:
            raise DataError(f"not a checkpoint file: {path}")
        header_line = fh.readline()
        payload = fh.read()
    try:
        header = json.loads(header_line.decode())
        kind = header["kind"]
        if kind == KIND_DENSE:
            model = _rebuild_dense(header)
        elif kind == KIND_SEQ:
            model = _rebuild_seq(header)
        else:
            raise DataError(f"unknown model kind in checkpoint: {kind!r}")
        n_params = int(header["n_params"])
    except DataError:
        raise
    except (KeyError, TypeError, ValueError) as err:
        raise DataError(f"corrupt checkpoint header in {path}: {err}") from err

    if len(payload) != 8 * n_params:
        raise DataError(
            f"checkpoint payload is {len(payload)} bytes, "
            f"expected {8 * n_params} for {n_params} parameters")
    flat = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    params = model.parameters()
    if sum(p.size for p in params) != n_params:
        raise DataError("header dims disagree with declared parameter count")
    write_flat(params, flat)
    return LoadedCheckpoint(model=model, header=header)
