"""Tiny decoder-only transformer inference and the KPTW weights format.

Inference is plain numpy float32 with one fixed evaluation order: a
sequential loop over layers, pre-norm attention then pre-norm MLP, no
fused or batched reordering. That makes next_cdf a deterministic function
of the pushed-token history on a given platform/build, which is all the
codec needs (encode and decode both run this engine). Cross-platform
bit-equality of float math is not promised.

Low-rank adapters, when present (adapter_rank > 0), are materialized into
the base matrices at load time: W_eff = W + (alpha / r) * B @ A.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, ModelError
from .models import QuantizedCdf, Session, quantize_probs

KPTW_MAGIC = b"KPTW"
KPTW_VERSION = 1

# Matrices that may carry low-rank adapters (<name>.lora_a / <name>.lora_b).
ADAPTABLE = ("attn.wq", "attn.wk", "attn.wv", "attn.wo", "mlp.fc1", "mlp.fc2")

_LN_EPS = np.float32(1e-5)


@dataclass
class KptwHeader:
    vocab_size: int
    dim: int
    layers: int
    heads: int
    max_ctx: int
    adapter_rank: int
    adapter_alpha: float


@dataclass
class KptwFile:
    header: KptwHeader
    tensors: dict[str, np.ndarray] = field(default_factory=dict)


def expected_tensor_shapes(h: KptwHeader, with_adapters: bool) -> dict[str, tuple]:
    """The fixed tensor-name list for a given header.

    lm_head is optional (absent means the output head is tied to
    embed_tokens); everything else listed here is required.
    """
    shapes = {
        "embed_tokens": (h.vocab_size, h.dim),
        "pos_embed": (h.max_ctx, h.dim),
        "final_norm.weight": (h.dim,),
        "final_norm.bias": (h.dim,),
    }
    mats = {
        "attn.wq": (h.dim, h.dim),
        "attn.wk": (h.dim, h.dim),
        "attn.wv": (h.dim, h.dim),
        "attn.wo": (h.dim, h.dim),
        "mlp.fc1": (4 * h.dim, h.dim),
        "mlp.fc2": (h.dim, 4 * h.dim),
    }
    for layer in range(h.layers):
        prefix = f"layers.{layer}."
        for name, shape in mats.items():
            shapes[prefix + name] = shape
            if with_adapters and name in ADAPTABLE:
                out_d, in_d = shape
                shapes[prefix + name + ".lora_a"] = (h.adapter_rank, in_d)
                shapes[prefix + name + ".lora_b"] = (out_d, h.adapter_rank)
        for norm in ("norm1", "norm2"):
            shapes[prefix + norm + ".weight"] = (h.dim,)
            shapes[prefix + norm + ".bias"] = (h.dim,)
    return shapes


def write_kptw(path: str, kptw: KptwFile) -> None:
    """Serialize header and named float32 tensors, little-endian."""
    h = kptw.header
    with open(path, "wb") as fh:
        fh.write(KPTW_MAGIC)
        fh.write(struct.pack("<B", KPTW_VERSION))
        fh.write(
            struct.pack(
                "<6If",
                h.vocab_size, h.dim, h.layers, h.heads, h.max_ctx,
                h.adapter_rank, h.adapter_alpha,
            )
        )
        for name, tensor in kptw.tensors.items():
            arr = np.ascontiguousarray(tensor, dtype="<f4")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def read_kptw(path: str) -> KptwFile:
    """Parse and fully validate a KPTW file.

    Raises:
        ModelError: bad magic/version, truncation, unknown or duplicate
            tensor names, shape mismatches, or missing required tensors.
    """
    with open(path, "rb") as fh:
        data = fh.read()

    def fail(msg):
        raise ModelError(f"{path}: {msg}")

    if len(data) < 4 or data[:4] != KPTW_MAGIC:
        fail("not a KPTW weights file")
    if data[4] != KPTW_VERSION:
        fail(f"unsupported KPTW version {data[4]}")
    pos = 5
    try:
        vocab, dim, layers, heads, max_ctx, rank = struct.unpack_from("<6I", data, pos)
        (alpha,) = struct.unpack_from("<f", data, pos + 24)
    except struct.error:
        fail("truncated header")
    pos += 28
    header = KptwHeader(vocab, dim, layers, heads, max_ctx, rank, float(alpha))
    if min(vocab, dim, layers, heads, max_ctx) < 1:
        fail("header fields must be positive")
    if dim % heads != 0:
        fail(f"dim {dim} not divisible by heads {heads}")

    expected = expected_tensor_shapes(header, with_adapters=rank > 0)
    tensors: dict[str, np.ndarray] = {}
    while pos < len(data):
        try:
            (name_len,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos : pos + name_len].decode("utf-8")
            pos += name_len
            (ndim,) = struct.unpack_from("<B", data, pos)
            pos += 1
            dims = struct.unpack_from(f"<{ndim}I", data, pos)
            pos += 4 * ndim
        except (struct.error, UnicodeDecodeError):
            fail("truncated or malformed tensor record")
        if name in tensors:
            fail(f"duplicate tensor {name!r}")
        if name != "lm_head" and name not in expected:
            fail(f"unknown tensor {name!r}")
        want = (vocab, dim) if name == "lm_head" else expected[name]
        if tuple(dims) != want:
            fail(f"tensor {name!r} has shape {tuple(dims)}, expected {want}")
        nbytes = 4 * int(np.prod(dims, dtype=np.int64)) if ndim else 4
        if pos + nbytes > len(data):
            fail(f"tensor {name!r} data truncated")
        arr = np.frombuffer(data, dtype="<f4", count=nbytes // 4, offset=pos)
        tensors[name] = arr.reshape(dims).astype(np.float32)
        pos += nbytes
    missing = sorted(set(expected) - set(tensors))
    if missing:
        fail(f"missing tensors: {missing[:4]}{'...' if len(missing) > 4 else ''}")
    return KptwFile(header=header, tensors=tensors)


def _merge_adapters(kptw: KptwFile) -> dict[str, np.ndarray]:
    """Fold W + (alpha/r) * B @ A into every adaptable matrix, float32."""
    h = kptw.header
    out = dict(kptw.tensors)
    if h.adapter_rank > 0:
        scaling = np.float32(h.adapter_alpha / h.adapter_rank)
        for layer in range(h.layers):
            for name in ADAPTABLE:
                key = f"layers.{layer}.{name}"
                a = out.pop(key + ".lora_a")
                b = out.pop(key + ".lora_b")
                out[key] = out[key] + scaling * (b @ a)
    return out


def _layernorm(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    mean = x.mean(dtype=np.float32)
    var = np.mean((x - mean) ** 2, dtype=np.float32)
    return ((x - mean) / np.sqrt(var + _LN_EPS)) * weight + bias


def _gelu(x: np.ndarray) -> np.ndarray:
    c = np.float32(0.7978845608028654)  # sqrt(2/pi)
    return np.float32(0.5) * x * (
        np.float32(1.0) + np.tanh(c * (x + np.float32(0.044715) * x * x * x))
    )


class TransformerSession(Session):
    """Causal next-token model with a per-token KV cache.

    The context is a sliding window of max_ctx tokens. While the history
    fits the window, each push costs one incremental forward step; once it
    overflows, the cache is rebuilt from the window suffix (token by token,
    the same code path, so results match a fresh session fed the suffix).
    """

    model_id = "tiny_transformer"

    def __init__(self, weights_path: str, expect_vocab: int | None = None):
        kptw = read_kptw(weights_path)
        h = kptw.header
        if expect_vocab is not None and h.vocab_size != int(expect_vocab):
            raise ModelError(
                f"{weights_path}: model vocab {h.vocab_size} does not match "
                f"required vocab {expect_vocab}"
            )
        self.vocab_size = h.vocab_size
        self.dim = h.dim
        self.layers = h.layers
        self.heads = h.heads
        self.head_dim = h.dim // h.heads
        self.max_ctx = h.max_ctx
        self._scale = np.float32(1.0 / np.sqrt(self.head_dim))
        w = _merge_adapters(kptw)
        self._w = w
        self._head = w.get("lm_head", w["embed_tokens"])
        self.reset()

    def reset(self) -> None:
        self._window: list[int] = []
        # Per layer: (keys, values) as lists of (heads, head_dim) arrays.
        self._kv: list[tuple[list, list]] = [([], []) for _ in range(self.layers)]
        self._logits: np.ndarray | None = None

    def _step(self, token: int, position: int) -> None:
        """One incremental forward pass; appends to the KV cache."""
        w = self._w
        x = w["embed_tokens"][token] + w["pos_embed"][position]
        for layer in range(self.layers):
            p = f"layers.{layer}."
            keys, values = self._kv[layer]
            h = _layernorm(x, w[p + "norm1.weight"], w[p + "norm1.bias"])
            q = (w[p + "attn.wq"] @ h).reshape(self.heads, self.head_dim)
            k = (w[p + "attn.wk"] @ h).reshape(self.heads, self.head_dim)
            v = (w[p + "attn.wv"] @ h).reshape(self.heads, self.head_dim)
            keys.append(k)
            values.append(v)
            kmat = np.stack(keys, axis=1)  # (heads, t, head_dim)
            vmat = np.stack(values, axis=1)
            scores = np.einsum("hd,htd->ht", q, kmat) * self._scale
            scores -= scores.max(axis=1, keepdims=True)
            att = np.exp(scores)
            att /= att.sum(axis=1, keepdims=True)
            ctx = np.einsum("ht,htd->hd", att, vmat).reshape(self.dim)
            x = x + w[p + "attn.wo"] @ ctx
            h = _layernorm(x, w[p + "norm2.weight"], w[p + "norm2.bias"])
            x = x + w[p + "mlp.fc2"] @ _gelu(w[p + "mlp.fc1"] @ h)
        h = _layernorm(x, w["final_norm.weight"], w["final_norm.bias"])
        self._logits = self._head @ h

    def _push(self, token: int) -> None:
        if len(self._window) == self.max_ctx:
            # Evict the oldest token: replay the suffix through the same
            # incremental path so positions and cache match a fresh feed.
            suffix = self._window[1:] + [token]
            self.reset()
            for t in suffix:
                self._push(t)
            return
        self._window.append(token)
        self._step(token, len(self._window) - 1)

    def next_cdf(self) -> QuantizedCdf:
        if self._logits is None:
            # Nothing pushed yet: an empty context has no defined logits;
            # serve uniform so the pre-bos table exists.
            return quantize_probs(np.ones(self.vocab_size))
        logits = self._logits.astype(np.float64)
        logits -= logits.max()
        probs = np.exp(logits)
        return quantize_probs(probs)
