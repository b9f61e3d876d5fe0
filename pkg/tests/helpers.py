"""Shared builders for test fixtures."""

import numpy as np

from kpcc.transformer import KptwFile, KptwHeader, expected_tensor_shapes


def random_kptw(rng, vocab=12, dim=8, layers=2, heads=2, max_ctx=16,
                adapter_rank=0, adapter_alpha=0.0, tied=True, scale=0.4):
    """A structurally valid KPTW bundle with random gaussian weights."""
    header = KptwHeader(vocab, dim, layers, heads, max_ctx,
                        adapter_rank, adapter_alpha)
    tensors = {}
    for name, shape in expected_tensor_shapes(header, adapter_rank > 0).items():
        if name.endswith(("norm1.weight", "norm2.weight", "final_norm.weight")):
            base = np.ones(shape)
        elif name.endswith(".bias"):
            base = np.zeros(shape)
        else:
            base = rng.normal(0.0, scale, size=shape)
        tensors[name] = base.astype(np.float32)
    if not tied:
        tensors["lm_head"] = rng.normal(0.0, scale, size=(vocab, dim)).astype(np.float32)
    return KptwFile(header=header, tensors=tensors)
