"""Probability model sessions and CDF quantization.

A session serves quantized cumulative-frequency tables (total 2^16, every
token mass >= 1) conditioned on the tokens pushed so far. Encode and decode
drive twin sessions through the same push sequence, so next_cdf must be a
pure deterministic function of (model, params, history).

Quantization rule (normative): raw probabilities are scaled by
(65536 - vocab_size), floored, every token gains +1, and the remaining
deficit goes one unit at a time to the highest-raw-probability tokens,
ties broken toward the lower token id.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ModelError, ParameterError

CDF_TOTAL = 1 << 16

MODEL_IDS = ("uniform", "adaptive_ctx", "tiny_transformer", "external_bridge")

# Interpolation weights for adaptive_ctx, longest context first. The rule
# behind the numbers: w_j = 0.9 * 0.1^j, with the last order absorbing the
# remainder; for order 2 this is exactly 0.9 / 0.09 / 0.01.
ADAPTIVE_ORDER = 2


def _adaptive_weights(order: int) -> np.ndarray:
    w = [0.9 * 0.1**j for j in range(order)]
    w.append(1.0 - sum(w))
    return np.asarray(w)


@dataclass(frozen=True)
class QuantizedCdf:
    """Cumulative frequencies: cumfreq[0]=0, cumfreq[-1]=65536, strict rise."""

    cumfreq: np.ndarray  # (vocab_size + 1,) uint32

    def __post_init__(self):
        cf = np.ascontiguousarray(np.asarray(self.cumfreq, dtype=np.uint32))
        if cf.ndim != 1 or cf.shape[0] < 2:
            raise ModelError("cumfreq must be 1-d with at least two entries")
        if cf[0] != 0 or cf[-1] != CDF_TOTAL:
            raise ModelError("cumfreq must start at 0 and end at 65536")
        if not np.all(cf[1:] > cf[:-1]):
            raise ModelError("cumfreq must be strictly increasing")
        cf.setflags(write=False)
        object.__setattr__(self, "cumfreq", cf)

    @property
    def vocab_size(self) -> int:
        return int(self.cumfreq.shape[0] - 1)

    def span(self, token: int) -> tuple[int, int]:
        return int(self.cumfreq[token]), int(self.cumfreq[token + 1])


def quantize_probs(raw: np.ndarray) -> QuantizedCdf:
    """Apply the normative quantization rule to raw probabilities.

    Raises:
        ModelError: non-finite, negative, or all-zero probabilities.
        ParameterError: vocabulary too large for 16-bit totals.
    """
    p = np.asarray(raw, dtype=np.float64)
    if p.ndim != 1 or p.shape[0] < 2:
        raise ParameterError("probability vector must be 1-d, length >= 2")
    vocab = p.shape[0]
    if vocab >= CDF_TOTAL:
        raise ParameterError("vocab_size must stay below 65536")
    if not np.all(np.isfinite(p)) or p.min() < 0.0:
        raise ModelError("probabilities must be finite and non-negative")
    total = p.sum()
    if total <= 0.0:
        raise ModelError("probabilities sum to zero")
    p = p / total
    scale = CDF_TOTAL - vocab
    freqs = np.floor(p * scale).astype(np.int64) + 1
    deficit = CDF_TOTAL - int(freqs.sum())
    if deficit:
        # Stable sort on -p: equal probabilities keep ascending-id order.
        order = np.argsort(-p, kind="stable")
        whole, rest = divmod(deficit, vocab)
        freqs += whole
        freqs[order[:rest]] += 1
    cumfreq = np.concatenate([[0], np.cumsum(freqs)]).astype(np.uint32)
    return QuantizedCdf(cumfreq)


class Session:
    """Base session: push_token validation plus the reset contract."""

    model_id: str
    vocab_size: int

    def next_cdf(self) -> QuantizedCdf:
        raise NotImplementedError

    def push_token(self, token: int) -> None:
        self._check(token)
        self._push(token)

    def _check(self, token: int) -> None:
        if not 0 <= token < self.vocab_size:
            raise DomainError(
                f"token {token} outside vocabulary of size {self.vocab_size}"
            )

    def _push(self, token: int) -> None:
        raise NotImplementedError

    def reset(self) -> None:
        """Drop all history; the session behaves as freshly started."""
        raise NotImplementedError

    def close(self) -> None:
        """Release external resources (only the bridge holds any)."""


class UniformSession(Session):
    """Equal mass for every token; history never matters."""

    model_id = "uniform"

    def __init__(self, vocab_size: int):
        if vocab_size < 2:
            raise ParameterError("uniform model needs vocab_size >= 2")
        self.vocab_size = int(vocab_size)
        self._cdf = quantize_probs(np.full(self.vocab_size, 1.0))

    def next_cdf(self) -> QuantizedCdf:
        return self._cdf

    def _push(self, token: int) -> None:
        pass

    def reset(self) -> None:
        pass


class StaticSession(Session):
    """Fixed known distribution; the matched-source reference for tests."""

    model_id = "static"

    def __init__(self, probs: np.ndarray):
        probs = np.asarray(probs, dtype=np.float64)
        self.vocab_size = int(probs.shape[0])
        self._cdf = quantize_probs(probs)

    def next_cdf(self) -> QuantizedCdf:
        return self._cdf

    def _push(self, token: int) -> None:
        pass

    def reset(self) -> None:
        pass


class AdaptiveContextSession(Session):
    """Order-N context mixture with Krichevsky-Trofimov style counts.

    Each order k keeps counts per k-token context; its estimate for token t
    is (count + 1/2) / (total + vocab/2), which is uniform on an unseen
    context. Orders are blended with fixed weights, longest context first.
    """

    model_id = "adaptive_ctx"

    def __init__(self, vocab_size: int, order: int = ADAPTIVE_ORDER):
        if vocab_size < 2:
            raise ParameterError("adaptive model needs vocab_size >= 2")
        if order < 0:
            raise ParameterError(f"order must be >= 0, got {order}")
        self.vocab_size = int(vocab_size)
        self.order = int(order)
        self._weights = _adaptive_weights(self.order)
        self.reset()

    def reset(self) -> None:
        # _counts[k] maps a k-token context tuple to [{token: count}, total].
        self._counts: list[dict] = [dict() for _ in range(self.order + 1)]
        self._history: list[int] = []

    def _context(self, k: int):
        return tuple(self._history[len(self._history) - k :])

    def next_cdf(self) -> QuantizedCdf:
        half_v = self.vocab_size / 2.0
        probs = np.zeros(self.vocab_size)
        for j, k in enumerate(range(self.order, -1, -1)):
            weight = self._weights[j]
            vec = np.full(self.vocab_size, 0.5)
            denom = half_v
            if k <= len(self._history):
                entry = self._counts[k].get(self._context(k))
                if entry is not None:
                    counts, total = entry
                    denom = total + half_v
                    ids = np.fromiter(counts.keys(), dtype=np.int64, count=len(counts))
                    vals = np.fromiter(counts.values(), dtype=np.float64, count=len(counts))
                    vec[ids] += vals
            probs += weight * (vec / denom)
        return quantize_probs(probs)

    def _push(self, token: int) -> None:
        for k in range(self.order + 1):
            if k <= len(self._history):
                ctx = self._context(k)
                entry = self._counts[k].setdefault(ctx, [{}, 0])
                entry[0][token] = entry[0].get(token, 0) + 1
                entry[1] += 1
        self._history.append(token)
        if len(self._history) > self.order:
            del self._history[: len(self._history) - self.order]


def session_start(model_id: str, model_params: dict | None = None) -> Session:
    """Open a fresh model session.

    model_params by model:
        uniform:         {"vocab_size": int}
        adaptive_ctx:    {"vocab_size": int, "order": int (optional)}
        tiny_transformer:{"weights": path, "expect_vocab": int (optional)}
        external_bridge: {"vocab_size": int, "cmd": str (optional, falls
                          back to $KPCC_BRIDGE_CMD), "timeout": float}

    Raises:
        ParameterError: unknown model id or missing/invalid params.
        ModelError / TransportError: weight or handshake failures.
    """
    params = dict(model_params or {})
    if model_id == "uniform":
        return UniformSession(_need_vocab(params))
    if model_id == "adaptive_ctx":
        return AdaptiveContextSession(
            _need_vocab(params), order=int(params.get("order", ADAPTIVE_ORDER))
        )
    if model_id == "tiny_transformer":
        from .transformer import TransformerSession

        if "weights" not in params:
            raise ParameterError("tiny_transformer requires a 'weights' path")
        return TransformerSession(
            params["weights"], expect_vocab=params.get("expect_vocab")
        )
    if model_id == "external_bridge":
        from .bridge import BridgeSession

        return BridgeSession(
            _need_vocab(params),
            cmd=params.get("cmd"),
            timeout=float(params.get("timeout", 10.0)),
        )
    raise ParameterError(f"unknown model id {model_id!r}; choose from {MODEL_IDS}")


def _need_vocab(params: dict) -> int:
    if "vocab_size" not in params:
        raise ParameterError("model_params must include vocab_size")
    return int(params["vocab_size"])
