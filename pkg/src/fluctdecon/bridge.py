"""Client side of the external-denoiser wire protocol (v1).

Frames are little-endian over a byte stream, each starting with the
magic "DNZ1":

  handshake request   magic, u8 msg_type=3
  handshake response  magic, u8 status, u16 version, u8 flags
                      (flags bit0 = returns_potential)
  denoise request     magic, u8 msg_type=1, f64 sigma, u32 height,
                      u32 width, then height*width f32 row-major
  denoise response    magic, u8 status; on status=0: f64 potential
                      (IEEE NaN when unavailable) then height*width f32;
                      on status!=0 the frame ends after the status byte
  shutdown            magic, u8 msg_type=2, no response

The wire carries float32 images; the quantization is part of a remote
denoiser's effective behavior. One request is in flight per connection.
Transports: a spawned subprocess speaking the protocol on stdio, or a
TCP endpoint.
"""

from __future__ import annotations

import math
import os
import select
import socket
import struct
import subprocess
import sys
import time
from dataclasses import dataclass

import numpy as np

from .errors import BridgeError, ParameterError, ProtocolError
from .regularizers import Denoiser

MAGIC = b"DNZ1"
PROTOCOL_VERSION = 1
MSG_DENOISE = 1
MSG_SHUTDOWN = 2
MSG_HANDSHAKE = 3
FLAG_RETURNS_POTENTIAL = 0x01

_HEADER = struct.Struct("<4sB")
_HANDSHAKE_RESP = struct.Struct("<HB")
_DENOISE_REQ_BODY = struct.Struct("<dII")
_F64 = struct.Struct("<d")


@dataclass(frozen=True)
class Capabilities:
    protocol_version: int
    returns_potential: bool


@dataclass(frozen=True)
class BridgeEndpoint:
    """Where the denoiser lives: a subprocess command or a TCP address."""

    command: tuple[str, ...] | None = None
    host: str | None = None
    port: int | None = None
    timeout_ms: int = 30000

    def __post_init__(self):
        has_cmd = self.command is not None
        has_tcp = self.host is not None and self.port is not None
        if has_cmd == has_tcp:
            raise ParameterError("endpoint needs exactly one of command or host+port")
        if self.timeout_ms <= 0:
            raise ParameterError("timeout_ms must be > 0")

    @classmethod
    def spawn(cls, command, timeout_ms: int = 30000) -> "BridgeEndpoint":
        return cls(command=tuple(command), timeout_ms=timeout_ms)

    @classmethod
    def tcp(cls, host: str, port: int, timeout_ms: int = 30000) -> "BridgeEndpoint":
        return cls(host=host, port=port, timeout_ms=timeout_ms)


# -- frame encoding -----------------------------------------------------------


def encode_handshake_request() -> bytes:
    return _HEADER.pack(MAGIC, MSG_HANDSHAKE)


def encode_shutdown() -> bytes:
    return _HEADER.pack(MAGIC, MSG_SHUTDOWN)


def encode_denoise_request(image: np.ndarray, sigma: float) -> bytes:
    img = np.ascontiguousarray(image, dtype=np.float32)
    if img.ndim != 2:
        raise ParameterError(f"denoise request needs a 2-D image, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ParameterError("refusing to send non-finite image over the bridge")
    h, w = img.shape
    return (
        _HEADER.pack(MAGIC, MSG_DENOISE)
        + _DENOISE_REQ_BODY.pack(float(sigma), h, w)
        + img.tobytes(order="C")
    )


def encode_handshake_response(returns_potential: bool) -> bytes:
    flags = FLAG_RETURNS_POTENTIAL if returns_potential else 0
    return _HEADER.pack(MAGIC, 0) + _HANDSHAKE_RESP.pack(PROTOCOL_VERSION, flags)


def encode_denoise_response(image: np.ndarray, potential: float | None) -> bytes:
    img = np.ascontiguousarray(image, dtype=np.float32)
    pot = float("nan") if potential is None else float(potential)
    return _HEADER.pack(MAGIC, 0) + _F64.pack(pot) + img.tobytes(order="C")


def encode_error_response() -> bytes:
    return _HEADER.pack(MAGIC, 1)


# -- transports ---------------------------------------------------------------


class _Transport:
    def read_exactly(self, n: int) -> bytes:
        raise NotImplementedError

    def write(self, data: bytes):
        raise NotImplementedError

    def close(self):
        raise NotImplementedError


class _SubprocessTransport(_Transport):
    def __init__(self, command, timeout_ms: int):
        self.timeout_s = timeout_ms / 1000.0
        try:
            self.proc = subprocess.Popen(
                list(command),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=sys.stderr.fileno() if hasattr(sys.stderr, "fileno") else None,
            )
        except OSError as exc:
            raise BridgeError(f"failed to spawn denoiser process: {exc}") from exc

    def read_exactly(self, n: int) -> bytes:
        fd = self.proc.stdout.fileno()
        buf = bytearray()
        deadline = time.monotonic() + self.timeout_s
        while len(buf) < n:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise BridgeError(f"timed out waiting for {n} bytes from denoiser process")
            ready, _, _ = select.select([fd], [], [], remaining)
            if not ready:
                continue
            chunk = os.read(fd, n - len(buf))
            if not chunk:
                code = self.proc.poll()
                raise BridgeError(
                    f"denoiser process closed the stream after {len(buf)}/{n} bytes"
                    + (f" (exit code {code})" if code is not None else "")
                )
            buf += chunk
        return bytes(buf)

    def write(self, data: bytes):
        try:
            self.proc.stdin.write(data)
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise BridgeError(f"denoiser process pipe closed: {exc}") from exc

    def close(self):
        for stream in (self.proc.stdin, self.proc.stdout):
            try:
                stream.close()
            except OSError:
                pass
        try:
            self.proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self.proc.kill()
            self.proc.wait()


class _TcpTransport(_Transport):
    def __init__(self, host: str, port: int, timeout_ms: int):
        try:
            self.sock = socket.create_connection((host, port), timeout=timeout_ms / 1000.0)
        except OSError as exc:
            raise BridgeError(f"cannot connect to denoiser at {host}:{port}: {exc}") from exc
        self.sock.settimeout(timeout_ms / 1000.0)

    def read_exactly(self, n: int) -> bytes:
        buf = bytearray()
        while len(buf) < n:
            try:
                chunk = self.sock.recv(n - len(buf))
            except socket.timeout as exc:
                raise BridgeError(f"timed out waiting for {n} bytes from denoiser") from exc
            except OSError as exc:
                raise BridgeError(f"socket error: {exc}") from exc
            if not chunk:
                raise BridgeError(f"denoiser closed the connection after {len(buf)}/{n} bytes")
            buf += chunk
        return bytes(buf)

    def write(self, data: bytes):
        try:
            self.sock.sendall(data)
        except OSError as exc:
            raise BridgeError(f"socket error: {exc}") from exc

    def close(self):
        try:
            self.sock.close()
        except OSError:
            pass


def _connect(endpoint: BridgeEndpoint) -> _Transport:
    if endpoint.command is not None:
        return _SubprocessTransport(endpoint.command, endpoint.timeout_ms)
    return _TcpTransport(endpoint.host, endpoint.port, endpoint.timeout_ms)


# -- client -------------------------------------------------------------------


def _read_header(transport: _Transport) -> int:
    raw = transport.read_exactly(_HEADER.size)
    magic, code = _HEADER.unpack(raw)
    if magic != MAGIC:
        raise ProtocolError(f"bad magic {magic!r} in response header")
    return code


def _do_handshake(transport: _Transport) -> Capabilities:
    transport.write(encode_handshake_request())
    status = _read_header(transport)
    if status != 0:
        raise ProtocolError(f"handshake rejected with status {status}")
    version, flags = _HANDSHAKE_RESP.unpack(transport.read_exactly(_HANDSHAKE_RESP.size))
    if version != PROTOCOL_VERSION:
        raise ProtocolError(
            f"protocol version mismatch: peer speaks {version}, expected {PROTOCOL_VERSION}"
        )
    return Capabilities(
        protocol_version=version,
        returns_potential=bool(flags & FLAG_RETURNS_POTENTIAL),
    )


def handshake(endpoint: BridgeEndpoint) -> Capabilities:
    """Open a connection, exchange capabilities, shut the peer down."""
    transport = _connect(endpoint)
    try:
        caps = _do_handshake(transport)
        transport.write(encode_shutdown())
        return caps
    finally:
        transport.close()


class BridgeDenoiser(Denoiser):
    """A remote denoiser behind the wire protocol, usable in the solver.

    Holds one connection with one in-flight request; not safe to share
    across threads without external serialization. Close (or use as a
    context manager) to send the shutdown frame.
    """

    is_exact_prox = False

    def __init__(self, endpoint: BridgeEndpoint):
        self.endpoint = endpoint
        self._transport = _connect(endpoint)
        try:
            caps = _do_handshake(self._transport)
        except Exception:
            self._transport.close()
            raise
        self.capabilities = caps
        self.returns_potential = caps.returns_potential
        self.name = "bridge"

    def denoise(self, z: np.ndarray, sigma: float) -> tuple[np.ndarray, float | None]:
        z = np.asarray(z)
        if z.ndim != 2:
            raise ParameterError(f"denoise expects a 2-D image, got shape {z.shape}")
        h, w = z.shape
        self._transport.write(encode_denoise_request(z, sigma))
        status = _read_header(self._transport)
        if status != 0:
            raise ProtocolError(f"denoiser reported error status {status}")
        (potential,) = _F64.unpack(self._transport.read_exactly(_F64.size))
        payload = self._transport.read_exactly(4 * h * w)
        image = np.frombuffer(payload, dtype="<f4").reshape(h, w).astype(np.float64)
        if not np.all(np.isfinite(image)):
            raise ProtocolError("denoiser returned non-finite pixels")
        return image, None if math.isnan(potential) else potential

    def remote_denoise(self, z: np.ndarray, sigma: float) -> tuple[np.ndarray, float | None]:
        return self.denoise(z, sigma)

    def close(self):
        if self._transport is None:
            return
        try:
            self._transport.write(encode_shutdown())
        except BridgeError:
            pass
        self._transport.close()
        self._transport = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
