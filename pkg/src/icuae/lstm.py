"""Sequence-to-sequence LSTM autoencoder with hand-derived BPTT.

The encoder consumes a zero-padded batch one timestep at a time and emits
its final hidden state as the embedding. The decoder starts from a zero
state, receives that embedding as its input at every timestep, and a
sigmoid projection maps each decoder hidden state back to feature space.

Gate storage is stacked: ``W`` is ``input_dim x 4*hidden_dim`` with the
column blocks ordered (input, forget, output, candidate), likewise ``U``
and ``b``. Padded steps are consumed and scored by default; with
``mask_padding`` the encoder state freezes past each sample's true length
and padded positions drop out of the loss and its gradients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .dense import DenseLayer, glorot_uniform
from .errors import ConfigError, NumericError, ShapeError
from .numeric import ActivationKind, sigmoid


@dataclass
class LstmCellParams:
    weights_x: np.ndarray  # input_dim x 4H, gate blocks (i, f, o, g)
    weights_h: np.ndarray  # H x 4H
    bias: np.ndarray  # 4H

    def __post_init__(self):
        self.weights_x = np.ascontiguousarray(self.weights_x, dtype=np.float64)
        self.weights_h = np.ascontiguousarray(self.weights_h, dtype=np.float64)
        self.bias = np.ascontiguousarray(self.bias, dtype=np.float64)
        four_h = self.weights_x.shape[1]
        if four_h % 4 != 0:
            raise ShapeError("gate axis must be 4*hidden_dim", self.weights_x.shape)
        h = four_h // 4
        if self.weights_h.shape != (h, four_h) or self.bias.shape != (four_h,):
            raise ShapeError("LSTM parameter shapes inconsistent",
                             self.weights_x.shape, self.weights_h.shape,
                             self.bias.shape)

    @property
    def input_dim(self) -> int:
        return self.weights_x.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.weights_x.shape[1] // 4

    def gate_view(self, name: str, which: str) -> np.ndarray:
        """Per-gate slice of a stacked array; name in {i, f, o, g}."""
        k = "ifog".index(name)
        h = self.hidden_dim
        arr = {"x": self.weights_x, "h": self.weights_h, "b": self.bias}[which]
        return arr[..., k * h:(k + 1) * h]


def init_lstm_cell(input_dim: int, hidden_dim: int,
                   rng: np.random.Generator) -> LstmCellParams:
    """Glorot-uniform gate weights, zero biases except forget bias 1.0."""
    if input_dim <= 0 or hidden_dim <= 0:
        raise ConfigError(f"dims must be positive: {input_dim}, {hidden_dim}")
    wx = np.concatenate([glorot_uniform(rng, input_dim, hidden_dim)
                         for _ in range(4)], axis=1)
    wh = np.concatenate([glorot_uniform(rng, hidden_dim, hidden_dim)
                         for _ in range(4)], axis=1)
    b = np.zeros(4 * hidden_dim)
    b[hidden_dim:2 * hidden_dim] = 1.0  # forget gate opens early training
    return LstmCellParams(weights_x=wx, weights_h=wh, bias=b)


@dataclass
class SeqAutoencoder:
    encoder: LstmCellParams
    decoder: LstmCellParams
    out_proj: DenseLayer
    hidden_dim: int
    num_features: int

    def __post_init__(self):
        if self.encoder.input_dim != self.num_features:
            raise ShapeError("encoder input dim must equal feature count",
                             (self.encoder.input_dim,), (self.num_features,))
        if self.decoder.input_dim != self.hidden_dim:
            raise ShapeError("decoder input dim must equal hidden dim",
                             (self.decoder.input_dim,), (self.hidden_dim,))
        if (self.encoder.hidden_dim != self.hidden_dim
                or self.decoder.hidden_dim != self.hidden_dim):
            raise ShapeError("encoder/decoder hidden dims must match",
                             (self.encoder.hidden_dim,),
                             (self.decoder.hidden_dim,), (self.hidden_dim,))
        if self.out_proj.weights.shape != (self.hidden_dim, self.num_features):
            raise ShapeError("projection must map hidden_dim to feature count",
                             self.out_proj.weights.shape,
                             (self.hidden_dim, self.num_features))
        if self.out_proj.activation is not ActivationKind.SIGMOID:
            raise ConfigError("projection activation must be Sigmoid")

    def parameters(self) -> List[np.ndarray]:
        """Live arrays: encoder W,U,b, decoder W,U,b, projection W,b."""
        return [self.encoder.weights_x, self.encoder.weights_h, self.encoder.bias,
                self.decoder.weights_x, self.decoder.weights_h, self.decoder.bias,
                self.out_proj.weights, self.out_proj.bias]


def init_seq(num_features: int, hidden_dim: int, seed: int) -> SeqAutoencoder:
    rng = np.random.default_rng(seed)
    encoder = init_lstm_cell(num_features, hidden_dim, rng)
    decoder = init_lstm_cell(hidden_dim, hidden_dim, rng)
    proj = DenseLayer(weights=glorot_uniform(rng, hidden_dim, num_features),
                      bias=np.zeros(num_features),
                      activation=ActivationKind.SIGMOID)
    return SeqAutoencoder(encoder=encoder, decoder=decoder, out_proj=proj,
                          hidden_dim=hidden_dim, num_features=num_features)


@dataclass
class SeqBatch:
    """Zero-padded minibatch: values in [0,1], zeros past each true length."""
    values: np.ndarray  # batch x T x features
    true_lengths: np.ndarray  # batch

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        self.true_lengths = np.asarray(self.true_lengths, dtype=np.int64)
        if self.values.ndim != 3:
            raise ShapeError("values must be batch x T x features",
                             self.values.shape)
        b, t, _ = self.values.shape
        if self.true_lengths.shape != (b,):
            raise ShapeError("true_lengths must have one entry per sample",
                             self.true_lengths.shape, (b,))
        if t == 0:
            raise ConfigError("empty time axis")
        if np.any(self.true_lengths < 1) or np.any(self.true_lengths > t):
            raise ConfigError(f"true_lengths must lie in [1, {t}]")
        if np.any(self.values < 0.0) or np.any(self.values > 1.0):
            raise ConfigError("values must lie in [0, 1]")
        steps = np.arange(t)[None, :, None]
        padded = steps >= self.true_lengths[:, None, None]
        if np.any(self.values[np.broadcast_to(padded, self.values.shape)] != 0.0):
            raise ConfigError("padded positions must be exactly zero")

    @property
    def batch_size(self) -> int:
        return self.values.shape[0]

    @property
    def num_steps(self) -> int:
        return self.values.shape[1]

    def step_mask(self) -> np.ndarray:
        """(T, batch, 1) float mask: 1.0 where t < true_length."""
        t = self.num_steps
        mask = (np.arange(t)[:, None] < self.true_lengths[None, :])
        return mask.astype(np.float64)[:, :, None]


def _split_gates(z: np.ndarray, h: int):
    return z[..., :h], z[..., h:2 * h], z[..., 2 * h:3 * h], z[..., 3 * h:]


def lstm_step(params: LstmCellParams, x_t: np.ndarray, h_prev: np.ndarray,
              c_prev: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """One cell update; accepts single vectors or batch-row matrices."""
    single = np.asarray(x_t).ndim == 1
    x_t = np.atleast_2d(np.asarray(x_t, dtype=np.float64))
    h_prev = np.atleast_2d(np.asarray(h_prev, dtype=np.float64))
    c_prev = np.atleast_2d(np.asarray(c_prev, dtype=np.float64))
    h = params.hidden_dim
    if x_t.shape[1] != params.input_dim:
        raise ShapeError("input width mismatch", x_t.shape, (params.input_dim,))
    if h_prev.shape[1] != h or c_prev.shape[1] != h:
        raise ShapeError("state width mismatch", h_prev.shape, c_prev.shape, (h,))

    z = x_t @ params.weights_x + h_prev @ params.weights_h + params.bias
    zi, zf, zo, zg = _split_gates(z, h)
    i, f, o = sigmoid(zi), sigmoid(zf), sigmoid(zo)
    g = np.tanh(zg)
    c = f * c_prev + i * g
    h_new = o * np.tanh(c)
    if single:
        return h_new[0], c[0]
    return h_new, c


@dataclass
class _CellTrace:
    """Per-step intermediates for one LSTM over a whole sequence."""
    gates: np.ndarray  # T x B x 4H, post-nonlinearity (i, f, o, g)
    c_candidate: np.ndarray  # T x B x H, pre-mask cell state
    c: np.ndarray  # (T+1) x B x H, post-mask, c[0] = 0
    h: np.ndarray  # (T+1) x B x H, post-mask, h[0] = 0


def _run_encoder(params: LstmCellParams, values: np.ndarray,
                 mask: Optional[np.ndarray]) -> _CellTrace:
    b, t, _ = values.shape
    hd = params.hidden_dim
    # Input-side GEMM for all steps at once; recurrence stays sequential.
    zx = np.einsum("btf,fk->tbk", values, params.weights_x) + params.bias
    gates = np.empty((t, b, 4 * hd))
    c_cand = np.empty((t, b, hd))
    c = np.zeros((t + 1, b, hd))
    h = np.zeros((t + 1, b, hd))
    for step in range(t):
        z = zx[step] + h[step] @ params.weights_h
        zi, zf, zo, zg = _split_gates(z, hd)
        i, f, o = sigmoid(zi), sigmoid(zf), sigmoid(zo)
        g = np.tanh(zg)
        gates[step] = np.concatenate([i, f, o, g], axis=1)
        c_cand[step] = f * c[step] + i * g
        h_cand = o * np.tanh(c_cand[step])
        if mask is None:
            c[step + 1] = c_cand[step]
            h[step + 1] = h_cand
        else:
            m = mask[step]
            c[step + 1] = m * c_cand[step] + (1.0 - m) * c[step]
            h[step + 1] = m * h_cand + (1.0 - m) * h[step]
    return _CellTrace(gates=gates, c_candidate=c_cand, c=c, h=h)


def _run_decoder(params: LstmCellParams, embedding: np.ndarray,
                 t: int) -> _CellTrace:
    b = embedding.shape[0]
    hd = params.hidden_dim
    zx = embedding @ params.weights_x + params.bias  # same input every step
    gates = np.empty((t, b, 4 * hd))
    c_cand = np.empty((t, b, hd))
    c = np.zeros((t + 1, b, hd))
    h = np.zeros((t + 1, b, hd))
    for step in range(t):
        z = zx + h[step] @ params.weights_h
        zi, zf, zo, zg = _split_gates(z, hd)
        i, f, o = sigmoid(zi), sigmoid(zf), sigmoid(zo)
        g = np.tanh(zg)
        gates[step] = np.concatenate([i, f, o, g], axis=1)
        c_cand[step] = f * c[step] + i * g
        c[step + 1] = c_cand[step]
        h[step + 1] = o * np.tanh(c_cand[step])
    return _CellTrace(gates=gates, c_candidate=c_cand, c=c, h=h)


def encode(model: SeqAutoencoder, batch: SeqBatch,
           mask_padding: bool = False) -> np.ndarray:
    """Embedding = encoder hidden state after the final step (batch x H)."""
    if batch.values.shape[2] != model.num_features:
        raise ShapeError("feature count mismatch", batch.values.shape,
                         (model.num_features,))
    mask = batch.step_mask() if mask_padding else None
    trace = _run_encoder(model.encoder, batch.values, mask)
    return trace.h[-1].copy()


def decode(model: SeqAutoencoder, embedding: np.ndarray, t: int) -> np.ndarray:
    """Reconstruct t steps from an embedding; returns batch x t x features."""
    if t <= 0:
        raise ConfigError("number of steps must be positive")
    embedding = np.asarray(embedding, dtype=np.float64)
    if embedding.ndim != 2 or embedding.shape[1] != model.hidden_dim:
        raise ShapeError("embedding must be batch x hidden_dim",
                         embedding.shape, (model.hidden_dim,))
    trace = _run_decoder(model.decoder, embedding, t)
    pre = trace.h[1:] @ model.out_proj.weights + model.out_proj.bias
    return sigmoid(pre).transpose(1, 0, 2)


@dataclass
class _SeqCache:
    enc: _CellTrace
    dec: _CellTrace
    recon: np.ndarray  # T x B x F, sigmoid outputs
    embedding: np.ndarray  # B x H
    mask: Optional[np.ndarray]  # T x B x 1 when masking
    denom: float


def _seq_forward(model: SeqAutoencoder, batch: SeqBatch,
                 mask_padding: bool) -> Tuple[float, _SeqCache]:
    if batch.values.shape[2] != model.num_features:
        raise ShapeError("feature count mismatch", batch.values.shape,
                         (model.num_features,))
    mask = batch.step_mask() if mask_padding else None
    enc = _run_encoder(model.encoder, batch.values, mask)
    embedding = enc.h[-1]
    dec = _run_decoder(model.decoder, embedding, batch.num_steps)
    recon = sigmoid(dec.h[1:] @ model.out_proj.weights + model.out_proj.bias)

    target = batch.values.transpose(1, 0, 2)  # T x B x F
    diff = recon - target
    if mask is None:
        denom = float(diff.size)
        loss = float(np.sum(diff * diff)) / denom
    else:
        denom = float(np.sum(mask) * model.num_features)
        loss = float(np.sum(mask * diff * diff)) / denom
    if not math.isfinite(loss):
        raise NumericError("non-finite reconstruction loss")
    return loss, _SeqCache(enc=enc, dec=dec, recon=recon, embedding=embedding,
                           mask=mask, denom=denom)


def seq_reconstruct(model: SeqAutoencoder, batch: SeqBatch,
                    mask_padding: bool = False) -> Tuple[np.ndarray, float]:
    """Forward only; returns (batch x T x F reconstruction, loss)."""
    loss, cache = _seq_forward(model, batch, mask_padding)
    return cache.recon.transpose(1, 0, 2).copy(), loss


def _cell_backward(params: LstmCellParams, trace: _CellTrace,
                   dh_step: np.ndarray, mask: Optional[np.ndarray],
                   d_embedding: Optional[np.ndarray]):
    """Shared BPTT over one cell.

    dh_step: T x B x H gradient arriving at each step's hidden output
    (zeros for the encoder except the seed placed at the final step by
    the caller via d_embedding). Returns (dZ: T x B x 4H, used for the
    input-side and recurrent weight gradients).
    """
    t, b, hd = trace.c_candidate.shape
    dz_all = np.empty((t, b, 4 * hd))
    dh_carry = np.zeros((b, hd)) if d_embedding is None else d_embedding.copy()
    dc_carry = np.zeros((b, hd))
    for step in range(t - 1, -1, -1):
        dh_total = dh_step[step] + dh_carry
        dc_total = dc_carry
        if mask is not None:
            m = mask[step]
            dh_cell = m * dh_total
            dc_cell = m * dc_total
            dh_carry = (1.0 - m) * dh_total
            dc_carry = (1.0 - m) * dc_total
        else:
            dh_cell = dh_total
            dc_cell = dc_total
            dh_carry = np.zeros_like(dh_total)
            dc_carry = np.zeros_like(dc_total)

        i, f, o, g = _split_gates(trace.gates[step], hd)
        tanh_c = np.tanh(trace.c_candidate[step])
        do = dh_cell * tanh_c
        dc = dc_cell + dh_cell * o * (1.0 - tanh_c * tanh_c)
        di = dc * g
        df = dc * trace.c[step]
        dg = dc * i
        dz = np.concatenate([di * i * (1.0 - i),
                             df * f * (1.0 - f),
                             do * o * (1.0 - o),
                             dg * (1.0 - g * g)], axis=1)
        dz_all[step] = dz
        dh_carry = dh_carry + dz @ params.weights_h.T
        dc_carry = dc_carry + dc * f
    return dz_all


def seq_forward_backward(model: SeqAutoencoder, batch: SeqBatch,
                         mask_padding: bool = False
                         ) -> Tuple[float, List[np.ndarray]]:
    """Loss and gradients for every parameter, in parameters() order."""
    loss, cache = _seq_forward(model, batch, mask_padding)
    t = batch.num_steps
    target = batch.values.transpose(1, 0, 2)

    d_recon = 2.0 * (cache.recon - target) / cache.denom
    if cache.mask is not None:
        d_recon = d_recon * cache.mask

    # Projection layer (sigma' written via the outputs themselves).
    d_pre = d_recon * cache.recon * (1.0 - cache.recon)
    hd_states = cache.dec.h[1:]  # T x B x H
    d_wp = np.tensordot(hd_states, d_pre, axes=([0, 1], [0, 1]))
    d_bp = d_pre.sum(axis=(0, 1))
    dh_dec = d_pre @ model.out_proj.weights.T  # T x B x H

    dz_dec = _cell_backward(model.decoder, cache.dec, dh_dec, None, None)
    dz_dec_sum = dz_dec.sum(axis=0)  # B x 4H; decoder input is E every step
    d_wxd = cache.embedding.T @ dz_dec_sum
    d_whd = np.tensordot(cache.dec.h[:-1], dz_dec, axes=([0, 1], [0, 1]))
    d_bd = dz_dec_sum.sum(axis=0)
    d_embedding = dz_dec_sum @ model.decoder.weights_x.T

    dh_enc = np.zeros_like(cache.enc.h[1:])
    dz_enc = _cell_backward(model.encoder, cache.enc, dh_enc, cache.mask,
                            d_embedding)
    d_wxe = np.einsum("btf,tbk->fk", batch.values, dz_enc)
    d_whe = np.tensordot(cache.enc.h[:-1], dz_enc, axes=([0, 1], [0, 1]))
    d_be = dz_enc.sum(axis=(0, 1))

    return loss, [d_wxe, d_whe, d_be, d_wxd, d_whd, d_bd, d_wp, d_bp]
