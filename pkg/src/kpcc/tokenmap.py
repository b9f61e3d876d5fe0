"""Symbol/token codebooks and chunk framing.

Occupancy symbols (1 .. 2^K - 1) map bijectively onto model token ids,
keeping three special ids (bos, eos, pad) out of the symbol image. Long
sequences are cut into chunks of bounded payload so each chunk can be
modeled and entropy-coded independently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import IntegrityError, MappingError, ParameterError

DEFAULT_BASE_ID = 3
DEFAULT_MAX_CHUNK_LEN = 512


@dataclass(frozen=True)
class Codebook:
    """Bijective symbol->token map over a fixed alphabet [1, 2^K - 1]."""

    k_bits: int
    bos_id: int
    eos_id: int
    pad_id: int
    sym_to_tok: np.ndarray  # index = symbol, [0] unused (-1)
    vocab_size: int

    def __post_init__(self):
        alphabet = (1 << self.k_bits) - 1
        table = np.asarray(self.sym_to_tok, dtype=np.int64)
        if table.shape != (alphabet + 1,):
            raise ParameterError(
                f"sym_to_tok must have {alphabet + 1} entries, got {table.shape}"
            )
        specials = (self.bos_id, self.eos_id, self.pad_id)
        if len(set(specials)) != 3 or min(specials) < 0:
            raise ParameterError("bos/eos/pad ids must be distinct and non-negative")
        image = table[1:]
        if image.min() < 0 or len(np.unique(image)) != alphabet:
            raise ParameterError("symbol map must be injective over the alphabet")
        if np.isin(list(specials), image).any():
            raise ParameterError("special ids collide with symbol tokens")
        top = max(int(image.max()), max(specials))
        if self.vocab_size < top + 1:
            raise ParameterError(
                f"vocab_size {self.vocab_size} smaller than largest id {top}"
            )
        if self.vocab_size >= 1 << 16:
            raise ParameterError("vocab_size must stay below 65536 for 16-bit CDFs")
        table.setflags(write=False)
        object.__setattr__(self, "sym_to_tok", table)
        # Inverse lookup: token -> symbol, -1 where undefined.
        inverse = np.full(self.vocab_size, -1, dtype=np.int64)
        inverse[image] = np.arange(1, alphabet + 1)
        inverse.setflags(write=False)
        object.__setattr__(self, "_tok_to_sym", inverse)

    @property
    def alphabet_size(self) -> int:
        return (1 << self.k_bits) - 1

    def tokens_for(self, symbols: np.ndarray) -> np.ndarray:
        symbols = np.asarray(symbols, dtype=np.int64)
        if symbols.size and (
            symbols.min() < 1 or symbols.max() > self.alphabet_size
        ):
            raise MappingError("symbol outside codebook domain")
        return self.sym_to_tok[symbols]

    def symbols_for(self, tokens: np.ndarray) -> np.ndarray:
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.size and (tokens.min() < 0 or tokens.max() >= self.vocab_size):
            raise MappingError("token outside vocabulary")
        symbols = self._tok_to_sym[tokens]
        if symbols.size and symbols.min() < 0:
            bad = int(tokens[symbols < 0][0])
            raise MappingError(f"token {bad} is not in the codebook image")
        return symbols


def default_codebook(k_bits: int, base_id: int = DEFAULT_BASE_ID) -> Codebook:
    """Canonical affine codebook: bos=0, eos=1, pad=2, symbol s -> base_id+s-1.

    vocab_size is exactly base_id + 2^k_bits - 1 (the smallest vocabulary
    holding the specials, the gap below base_id, and the full alphabet).
    """
    if not 2 <= k_bits <= 16:
        raise ParameterError(f"k_bits must be in [2, 16], got {k_bits}")
    if base_id < 3:
        raise ParameterError(f"base_id must be >= 3, got {base_id}")
    alphabet = (1 << k_bits) - 1
    vocab = base_id + alphabet
    if vocab >= 1 << 16:
        raise ParameterError("vocabulary too large for 16-bit CDFs")
    table = np.concatenate([[-1], np.arange(base_id, base_id + alphabet)])
    return Codebook(
        k_bits=k_bits, bos_id=0, eos_id=1, pad_id=2,
        sym_to_tok=table, vocab_size=vocab,
    )


def load_codebook(path: str, k_bits: int) -> Codebook:
    """Read a codebook file: one token id per line.

    Lines 1-3 are bos/eos/pad; line i+3 is the token for symbol i. The file
    must cover the whole alphabet for k_bits.
    """
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    alphabet = (1 << k_bits) - 1
    if len(lines) != 3 + alphabet:
        raise ParameterError(
            f"codebook file has {len(lines)} ids, need {3 + alphabet} for K={k_bits}"
        )
    try:
        ids = [int(ln) for ln in lines]
    except ValueError as exc:
        raise ParameterError(f"{path}: non-integer codebook entry") from exc
    table = np.concatenate([[-1], np.asarray(ids[3:], dtype=np.int64)])
    vocab = max(ids) + 1
    return Codebook(
        k_bits=k_bits, bos_id=ids[0], eos_id=ids[1], pad_id=ids[2],
        sym_to_tok=table, vocab_size=vocab,
    )


def save_codebook(cb: Codebook, path: str) -> None:
    ids = [cb.bos_id, cb.eos_id, cb.pad_id] + cb.sym_to_tok[1:].tolist()
    with open(path, "w") as fh:
        fh.write("\n".join(str(i) for i in ids) + "\n")


@dataclass(frozen=True)
class TokenChunk:
    """One bounded run of payload tokens framed by bos/eos."""

    chunk_index: int
    tokens: tuple[int, ...]

    @property
    def payload_len(self) -> int:
        return len(self.tokens) - 2


def tokenize_chunks(
    seq, cb: Codebook, max_chunk_len: int = DEFAULT_MAX_CHUNK_LEN
) -> list[TokenChunk]:
    """Map a symbol sequence to bos/eos-framed chunks of bounded payload.

    Args:
        seq: an OccupancySequence or a plain array of symbols.
        cb: codebook covering every symbol in seq.
        max_chunk_len: payload cap per chunk.

    Raises:
        ParameterError: max_chunk_len < 1.
        MappingError: a symbol outside the codebook domain.
    """
    if max_chunk_len < 1:
        raise ParameterError(f"max_chunk_len must be >= 1, got {max_chunk_len}")
    tokens = cb.tokens_for(getattr(seq, "symbols", seq))
    chunks = []
    for index, start in enumerate(range(0, len(tokens), max_chunk_len)):
        body = tokens[start : start + max_chunk_len].tolist()
        chunks.append(
            TokenChunk(chunk_index=index, tokens=(cb.bos_id, *body, cb.eos_id))
        )
    return chunks


def detokenize_chunks(chunks: list[TokenChunk], cb: Codebook) -> np.ndarray:
    """Merge chunks by index, strip framing, inverse-map to symbols.

    Chunk order does not matter; indices must form exactly 0..n-1. The
    decodability of the symbol stream itself is validated later, when the
    caller wraps it in an OccupancySequence.

    Raises:
        IntegrityError: duplicate/missing chunk_index or broken framing.
        MappingError: a payload token outside the codebook image.
    """
    indices = sorted(c.chunk_index for c in chunks)
    if indices != list(range(len(chunks))):
        raise IntegrityError(f"chunk indices {indices} are not exactly 0..n-1")
    specials = {cb.bos_id, cb.eos_id, cb.pad_id}
    parts = []
    for chunk in sorted(chunks, key=lambda c: c.chunk_index):
        toks = chunk.tokens
        if len(toks) < 2 or toks[0] != cb.bos_id or toks[-1] != cb.eos_id:
            raise IntegrityError(
                f"chunk {chunk.chunk_index}: missing bos/eos framing"
            )
        body = np.asarray(toks[1:-1], dtype=np.int64)
        if body.size and np.isin(body, list(specials)).any():
            raise IntegrityError(
                f"chunk {chunk.chunk_index}: special token inside payload"
            )
        parts.append(cb.symbols_for(body))
    merged = np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)
    return merged.astype(np.uint16)
