"""Multi-head graph attention encoder/decoder and the parameter archive.

Parameters live in a flat ``name -> array`` map::

    encoder.{0,1}.W{k}    F_in x F_head weight of head k
    encoder.{0,1}.a{k}    2*F_head x 1 attention vector of head k
    encoder.{0,1}.slope   1 x 1 PReLU slope
    decoder.0.*           as above (heads concatenated, PReLU)
    decoder.1.W{k}/a{k}   heads averaged to width F, no activation
    noise                 1 x F trainable noise row (absent for the no-corruption variant)

The forward functions take any mapping of those names to tape tensors, so
the same code runs under training (parameters registered on a tape) and
frozen inference (parameters as constants).
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .corruption import mask_flags

LEAKY_SLOPE = 0.2
PRELU_INIT = 0.25
CHECKPOINT_MAGIC = "HATGAE-CHECKPOINT"
CHECKPOINT_VERSION = 1


@dataclass
class GatLayerParams:
    weights: list
    attn: list
    combine: str = "concat"
    slope: np.ndarray | None = None

    @property
    def heads(self):
        return len(self.weights)

    @property
    def head_width(self):
        return self.weights[0].shape[1]

    @property
    def out_width(self):
        return self.heads * self.head_width if self.combine == "concat" else self.head_width


@dataclass
class ModelParams:
    encoder: list
    decoder: list
    noise: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_dims(self):
        return self.encoder[0].weights[0].shape[0]

    @property
    def hidden(self):
        return self.encoder[-1].out_width

    def flat(self):
        out = {}
        for part, layers in (("encoder", self.encoder), ("decoder", self.decoder)):
            for i, layer in enumerate(layers):
                for k, (w, a) in enumerate(zip(layer.weights, layer.attn)):
                    out[f"{part}.{i}.W{k}"] = w
                    out[f"{part}.{i}.a{k}"] = a
                if layer.slope is not None:
                    out[f"{part}.{i}.slope"] = layer.slope
        if self.noise is not None:
            out["noise"] = self.noise
        return out

    @classmethod
    def from_flat(cls, flat, meta=None):
        def layers(part):
            out = []
            i = 0
            while f"{part}.{i}.W0" in flat:
                ws, As = [], []
                k = 0
                while f"{part}.{i}.W{k}" in flat:
                    ws.append(np.array(flat[f"{part}.{i}.W{k}"], dtype=np.float64))
                    As.append(np.array(flat[f"{part}.{i}.a{k}"], dtype=np.float64))
                    k += 1
                slope = flat.get(f"{part}.{i}.slope")
                out.append(GatLayerParams(ws, As, "concat",
                                          None if slope is None else np.array(slope, dtype=np.float64)))
                i += 1
            return out

        enc, dec = layers("encoder"), layers("decoder")
        if not enc or not dec:
            raise ValueError("parameter map lacks encoder or decoder layers")
        dec[-1].combine = "average"
        noise = flat.get("noise")
        return cls(enc, dec, None if noise is None else np.array(noise, dtype=np.float64),
                   dict(meta or {}))

    def n_parameters(self):
        return int(sum(v.size for v in self.flat().values()))

    def copy(self):
        return ModelParams.from_flat({k: v.copy() for k, v in self.flat().items()}, self.meta)


def _glorot(rng, fan_in, fan_out):
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=(fan_in, fan_out))


def _init_layer(rng, f_in, f_head, heads, combine, activation):
    ws = [_glorot(rng, f_in, f_head) for _ in range(heads)]
    As = [_glorot(rng, 2 * f_head, 1) for _ in range(heads)]
    slope = np.full((1, 1), PRELU_INIT) if activation == "prelu" else None
    return GatLayerParams(ws, As, combine, slope)


def init_model_params(n_dims, hidden=64, heads=4, rng=None, with_noise=True, noise_std=0.02):
    """Glorot-uniform GAT stacks, PReLU slopes at 0.25, noise row from N(0, noise_std)."""
    if hidden % heads:
        raise ValueError(f"hidden size {hidden} must be divisible by heads {heads}")
    rng = np.random.default_rng(rng)
    fh = hidden // heads
    encoder = [
        _init_layer(rng, n_dims, fh, heads, "concat", "prelu"),
        _init_layer(rng, hidden, fh, heads, "concat", "prelu"),
    ]
    decoder = [
        _init_layer(rng, hidden, fh, heads, "concat", "prelu"),
        _init_layer(rng, hidden, n_dims, heads, "average", "identity"),
    ]
    noise = rng.normal(0.0, noise_std, size=(1, n_dims)) if with_noise else None
    return ModelParams(encoder, decoder, noise, {"hidden": hidden, "heads": heads})


# --------------------------------------------------------------------------
# forward passes


def as_tensors(params, tape=None):
    """Constant tensors for every array in ``params`` (a ModelParams or flat map)."""
    tape = tape or ad.Tape()
    flat = params.flat() if isinstance(params, ModelParams) else params
    return {k: (v if isinstance(v, ad.Tensor) else tape.const(v)) for k, v in flat.items()}


def register_params(tape, params, names=None):
    """Register trainable arrays on ``tape``; names outside ``names`` become constants."""
    flat = params.flat() if isinstance(params, ModelParams) else params
    return {
        k: tape.param(k, v) if names is None or k in names else tape.const(v)
        for k, v in flat.items()
    }


def _layer_tensors(p, prefix):
    ws, As = [], []
    k = 0
    while f"{prefix}.W{k}" in p:
        ws.append(p[f"{prefix}.W{k}"])
        As.append(p[f"{prefix}.a{k}"])
        k += 1
    if not ws:
        raise KeyError(f"no parameters for layer {prefix!r}")
    return ws, As, p.get(f"{prefix}.slope")


def gat_layer_forward(g, h, weights, attn, combine="concat", slope=None, return_attention=False):
    """One multi-head attention layer over ``g`` with a self-loop on every node.

    Head ``k`` scores edge ``u -> v`` with
    ``leaky_relu(a_k . [W_k h_v || W_k h_u])``, normalizes the scores over
    ``v``'s incoming edges and sums ``W_k h_u`` under those weights.
    """
    tape = weights[0].tape
    if not isinstance(h, ad.Tensor):
        h = tape.const(h)
    if h.shape[1] != weights[0].shape[0]:
        raise ValueError(f"input width {h.shape[1]} does not match weight rows {weights[0].shape[0]}")
    src, dst = g.attention_index
    n = g.n_nodes
    outs, atts = [], []
    for w, a in zip(weights, attn):
        fh = w.shape[1]
        if a.shape != (2 * fh, 1):
            raise ValueError(f"attention vector must have shape ({2 * fh}, 1), got {a.shape}")
        wh = h @ w
        s_dst = wh @ ad.gather_rows(a, np.arange(fh))
        s_src = wh @ ad.gather_rows(a, np.arange(fh, 2 * fh))
        e = ad.leaky_relu(ad.gather_rows(s_dst, dst) + ad.gather_rows(s_src, src), LEAKY_SLOPE)
        att = ad.segment_softmax(e, dst, n)
        outs.append(ad.scatter_add_rows(ad.gather_rows(wh, src) * att, dst, n))
        atts.append(att.value[:, 0])
    if combine == "concat":
        out = ad.concat_cols(outs) if len(outs) > 1 else outs[0]
    elif combine == "average":
        out = outs[0]
        for o in outs[1:]:
            out = out + o
        out = ad.scale(out, 1.0 / len(outs))
    else:
        raise ValueError(f"unknown combine mode {combine!r}")
    if slope is not None:
        out = ad.prelu(out, slope)
    if return_attention:
        return out, atts
    return out


def _p(params, like=None):
    if isinstance(params, ModelParams):
        return as_tensors(params, like.tape if isinstance(like, ad.Tensor) else None)
    return params


def encode(g, x, params):
    """Two concatenating attention layers, each followed by PReLU."""
    p = _p(params, x)
    h = x
    for i in range(2):
        ws, As, slope = _layer_tensors(p, f"encoder.{i}")
        h = gat_layer_forward(g, h, ws, As, "concat", slope)
    return h


def remask(h, mask):
    """Zero the hidden rows of noisy nodes."""
    flags = mask_flags(mask)
    if len(flags) != h.shape[0]:
        raise ValueError(f"mask has {len(flags)} nodes, hidden code has {h.shape[0]} rows")
    return ad.zero_rows(h, np.flatnonzero(flags))


def decode(g, h_tilde, params):
    """A concatenating PReLU layer, then an averaging layer back to width F."""
    p = _p(params, h_tilde)
    ws, As, slope = _layer_tensors(p, "decoder.0")
    z = gat_layer_forward(g, h_tilde, ws, As, "concat", slope)
    ws, As, _ = _layer_tensors(p, "decoder.1")
    return gat_layer_forward(g, z, ws, As, "average", None)


# --------------------------------------------------------------------------
# checkpoint archive
#
# text header "HATGAE-CHECKPOINT\t<version>\n", a "meta\t<json>\n" line, then
# per tensor "name\t<rows>x<cols>\n" followed by rows*cols little-endian f8
# values in row-major order, closed by "end\n".


def save_checkpoint(path, params):
    buf = io.BytesIO()
    buf.write(f"{CHECKPOINT_MAGIC}\t{CHECKPOINT_VERSION}\n".encode())
    buf.write(f"meta\t{json.dumps(params.meta, sort_keys=True)}\n".encode())
    for name, v in params.flat().items():
        v = np.asarray(v, dtype="<f8")
        buf.write(f"{name}\t{v.shape[0]}x{v.shape[1]}\n".encode())
        buf.write(np.ascontiguousarray(v).tobytes(order="C"))
    buf.write(b"end\n")
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        data = fh.read()
    stream = io.BytesIO(data)
    header = stream.readline().decode().rstrip("\n").split("\t")
    if len(header) != 2 or header[0] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    if int(header[1]) != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {header[1]}")
    meta_line = stream.readline().decode().rstrip("\n")
    if not meta_line.startswith("meta\t"):
        raise ValueError(f"{path}: missing meta line")
    meta = json.loads(meta_line[5:])
    flat = {}
    while True:
        line = stream.readline()
        if not line:
            raise ValueError(f"{path}: truncated checkpoint")
        line = line.decode().rstrip("\n")
        if line == "end":
            break
        try:
            name, shape = line.split("\t")
            rows, cols = (int(s) for s in shape.split("x"))
        except ValueError:
            raise ValueError(f"{path}: truncated or malformed tensor header {line!r}") from None
        raw = stream.read(rows * cols * 8)
        if len(raw) != rows * cols * 8:
            raise ValueError(f"{path}: truncated tensor {name}")
        flat[name] = np.frombuffer(raw, dtype="<f8").reshape(rows, cols).astype(np.float64)
    return ModelParams.from_flat(flat, meta)
