"""Out-of-process probability models over length-prefixed stdio frames.

The child process speaks a strict request/response protocol, one request
in flight at a time. Every frame is {len u32 LE, type u8, body} where len
counts the type byte plus the body. Request types and their replies:

    0x01 INIT   {vocab u32, proto_version u8}  ->  0x81 ACK {vocab u32}
    0x02 RESET  {}                             ->  0x82 ACK {}
    0x03 PUSH   {token u32}                    ->  0x83 ACK {}
    0x04 GETCDF {}                             ->  0x84 CDF {(vocab+1) x u32}

Anything else earns 0xFF ERR {code u8} from a conforming peer. Any
timeout, short read, unexpected reply, or child death surfaces as
TransportError; the codec layer above treats that as an aborted stream,
never as data.
"""

from __future__ import annotations

import os
import select
import shlex
import struct
import subprocess
import time

import numpy as np

from .errors import ParameterError, TransportError
from .models import CDF_TOTAL, QuantizedCdf, Session

BRIDGE_ENV_VAR = "KPCC_BRIDGE_CMD"
PROTO_VERSION = 1

MSG_INIT = 0x01
MSG_RESET = 0x02
MSG_PUSH = 0x03
MSG_GETCDF = 0x04
MSG_ACK_INIT = 0x81
MSG_ACK_RESET = 0x82
MSG_ACK_PUSH = 0x83
MSG_CDF = 0x84
MSG_ERR = 0xFF

_MAX_FRAME = 1 + 4 * 65537  # largest legal reply: CDF at the vocab ceiling


def pack_frame(msg_type: int, body: bytes = b"") -> bytes:
    return struct.pack("<IB", 1 + len(body), msg_type) + body


class BridgeSession(Session):
    """Session backed by a child process speaking the bridge protocol."""

    model_id = "external_bridge"

    def __init__(self, vocab_size: int, cmd: str | None = None, timeout: float = 10.0):
        if vocab_size < 2:
            raise ParameterError("bridge model needs vocab_size >= 2")
        cmd = cmd or os.environ.get(BRIDGE_ENV_VAR)
        if not cmd:
            raise ParameterError(
                f"external_bridge needs a command (cmd param or ${BRIDGE_ENV_VAR})"
            )
        self.vocab_size = int(vocab_size)
        self._timeout = float(timeout)
        self._proc: subprocess.Popen | None = None
        try:
            self._proc = subprocess.Popen(
                shlex.split(cmd),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
            )
        except OSError as exc:
            raise TransportError(f"cannot start bridge process: {exc}") from exc
        os.set_blocking(self._proc.stdout.fileno(), False)
        body = self._request(
            MSG_INIT,
            struct.pack("<IB", self.vocab_size, PROTO_VERSION),
            MSG_ACK_INIT,
        )
        if len(body) != 4:
            self._die("malformed INIT ack")
        (acked,) = struct.unpack("<I", body)
        if acked != self.vocab_size:
            self._die(f"bridge acknowledged vocab {acked}, wanted {self.vocab_size}")

    # -- framed transport ------------------------------------------------

    def _die(self, msg: str):
        self.close()
        raise TransportError(msg)

    def _send(self, frame: bytes) -> None:
        try:
            self._proc.stdin.write(frame)
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError):
            self._die("bridge process closed its input (died?)")

    def _read_exact(self, n: int) -> bytes:
        fd = self._proc.stdout.fileno()
        deadline = time.monotonic() + self._timeout
        chunks = []
        got = 0
        while got < n:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                self._die(f"bridge reply timed out after {self._timeout:.1f}s")
            ready, _, _ = select.select([fd], [], [], remaining)
            if not ready:
                continue
            piece = os.read(fd, n - got)
            if not piece:
                self._die("bridge process ended mid-reply")
            chunks.append(piece)
            got += len(piece)
        return b"".join(chunks)

    def _request(self, msg_type: int, body: bytes, want_type: int) -> bytes:
        if self._proc is None:
            raise TransportError("bridge session is closed")
        self._send(pack_frame(msg_type, body))
        (length,) = struct.unpack("<I", self._read_exact(4))
        if not 1 <= length <= _MAX_FRAME:
            self._die(f"bridge sent an implausible frame length {length}")
        payload = self._read_exact(length)
        reply_type, reply_body = payload[0], payload[1:]
        if reply_type == MSG_ERR:
            code = reply_body[0] if reply_body else -1
            self._die(f"bridge rejected request 0x{msg_type:02x} with error {code}")
        if reply_type != want_type:
            self._die(
                f"bridge answered 0x{reply_type:02x} where 0x{want_type:02x} expected"
            )
        return reply_body

    # -- session contract --------------------------------------------------

    def reset(self) -> None:
        self._request(MSG_RESET, b"", MSG_ACK_RESET)

    def _push(self, token: int) -> None:
        self._request(MSG_PUSH, struct.pack("<I", token), MSG_ACK_PUSH)

    def next_cdf(self) -> QuantizedCdf:
        body = self._request(MSG_GETCDF, b"", MSG_CDF)
        want = 4 * (self.vocab_size + 1)
        if len(body) != want:
            self._die(f"CDF reply is {len(body)} bytes, expected {want}")
        cumfreq = np.frombuffer(body, dtype="<u4").astype(np.uint32)
        if cumfreq[-1] != CDF_TOTAL:
            self._die(f"bridge CDF sums to {cumfreq[-1]}, must be {CDF_TOTAL}")
        try:
            return QuantizedCdf(cumfreq)
        except Exception as exc:
            self._die(f"bridge sent an invalid CDF: {exc}")

    def close(self) -> None:
        proc, self._proc = self._proc, None
        if proc is None:
            return
        for stream in (proc.stdin, proc.stdout):
            try:
                stream.close()
            except OSError:
                pass
        try:
            proc.wait(timeout=2.0)
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.wait()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def __del__(self):
        try:
            self.close()
        except Exception:
            pass
