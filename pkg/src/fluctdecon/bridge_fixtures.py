"""Reference servers for the denoiser wire protocol, used by tests and
`fluctdecon bridge-check`.

Run as a module:

    python -m fluctdecon.bridge_fixtures --mode echo --transport stdio
    python -m fluctdecon.bridge_fixtures --mode scale --alpha 0.5 --transport tcp --port 0

Modes:
  echo      return the payload unchanged, no potential (flags=0)
  scale     multiply by (1 - alpha) and report the quadratic potential
            0.5*alpha*||z||^2, both computed in float64 on the decoded
            float32 input (flags bit0 set)
  nan       answer with a NaN-filled payload (negative test)
  badmagic  answer the handshake with a wrong magic (negative test)
  truncate  send half a handshake response and close (negative test)

A TCP server with --port 0 binds an ephemeral port and prints
"PORT <n>" on stdout before serving. --die-after N exits abruptly
before answering the (N+1)-th denoise request, for crash testing.
"""

from __future__ import annotations

import argparse
import os
import socket
import struct
import sys

import numpy as np

from .bridge import (
    FLAG_RETURNS_POTENTIAL,
    MAGIC,
    MSG_DENOISE,
    MSG_HANDSHAKE,
    MSG_SHUTDOWN,
    PROTOCOL_VERSION,
    encode_denoise_response,
    encode_error_response,
)

_HEADER = struct.Struct("<4sB")
_DENOISE_REQ_BODY = struct.Struct("<dII")
_HANDSHAKE_RESP = struct.Struct("<HB")


class _Stream:
    def __init__(self, read, write):
        self._read = read
        self._write = write

    def read_exactly(self, n: int) -> bytes | None:
        buf = bytearray()
        while len(buf) < n:
            chunk = self._read(n - len(buf))
            if not chunk:
                return None
            buf += chunk
        return bytes(buf)

    def write(self, data: bytes):
        self._write(data)


def _handshake_response(mode: str) -> bytes:
    if mode == "badmagic":
        return b"XXXX" + bytes([0]) + _HANDSHAKE_RESP.pack(PROTOCOL_VERSION, 0)
    if mode == "truncate":
        return _HEADER.pack(MAGIC, 0) + _HANDSHAKE_RESP.pack(PROTOCOL_VERSION, 0)[:1]
    flags = FLAG_RETURNS_POTENTIAL if mode == "scale" else 0
    return _HEADER.pack(MAGIC, 0) + _HANDSHAKE_RESP.pack(PROTOCOL_VERSION, flags)


def _serve_stream(stream: _Stream, mode: str, alpha: float, die_after: int | None) -> bool:
    """Handle frames until shutdown/EOF. Returns True when shut down cleanly."""
    answered = 0
    while True:
        header = stream.read_exactly(_HEADER.size)
        if header is None:
            return False
        magic, msg_type = _HEADER.unpack(header)
        if magic != MAGIC:
            stream.write(encode_error_response())
            return False
        if msg_type == MSG_SHUTDOWN:
            return True
        if msg_type == MSG_HANDSHAKE:
            stream.write(_handshake_response(mode))
            if mode == "truncate":
                return False
            continue
        if msg_type != MSG_DENOISE:
            stream.write(encode_error_response())
            continue

        body = stream.read_exactly(_DENOISE_REQ_BODY.size)
        if body is None:
            return False
        _sigma, h, w = _DENOISE_REQ_BODY.unpack(body)
        payload = stream.read_exactly(4 * h * w)
        if payload is None:
            return False
        if die_after is not None and answered >= die_after:
            os._exit(17)
        z32 = np.frombuffer(payload, dtype="<f4").reshape(h, w)
        if mode == "scale":
            z64 = z32.astype(np.float64)
            out = ((1.0 - alpha) * z64).astype(np.float32)
            potential = 0.5 * alpha * float((z64**2).sum())
            stream.write(encode_denoise_response(out, potential))
        elif mode == "nan":
            stream.write(encode_denoise_response(np.full((h, w), np.nan, np.float32), None))
        else:  # echo
            stream.write(encode_denoise_response(z32, None))
        answered += 1


def serve_stdio(mode: str, alpha: float, die_after: int | None):
    stream = _Stream(sys.stdin.buffer.read, lambda d: (sys.stdout.buffer.write(d), sys.stdout.buffer.flush()))
    _serve_stream(stream, mode, alpha, die_after)


def serve_tcp(mode: str, alpha: float, port: int, die_after: int | None):
    server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    server.bind(("127.0.0.1", port))
    server.listen(1)
    print(f"PORT {server.getsockname()[1]}", flush=True)
    conn, _addr = server.accept()
    with conn:
        stream = _Stream(conn.recv, conn.sendall)
        _serve_stream(stream, mode, alpha, die_after)
    server.close()


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="denoiser protocol fixture server")
    parser.add_argument("--mode", default="echo",
                        choices=["echo", "scale", "nan", "badmagic", "truncate"])
    parser.add_argument("--alpha", type=float, default=0.5)
    parser.add_argument("--transport", default="stdio", choices=["stdio", "tcp"])
    parser.add_argument("--port", type=int, default=0)
    parser.add_argument("--die-after", type=int, default=None)
    args = parser.parse_args(argv)
    if args.transport == "tcp":
        serve_tcp(args.mode, args.alpha, args.port, args.die_after)
    else:
        serve_stdio(args.mode, args.alpha, args.die_after)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
