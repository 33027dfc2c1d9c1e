"""On-disk formats and experiment manifests.

Stacks use a minimal binary container ("FLK1") chosen for bit-exact
round trips: magic, u32 version, u32 T, u32 h, u32 w, f64 pixel_size_nm,
f64 fwhm_nm (36 header bytes), then T*h*w little-endian float32 frames.
Images for viewing are written as 16-bit binary PGM with a JSON sidecar
recording the applied scaling; arrays that must round-trip exactly
(covariance images, solver outputs) use .npy. Emitter ground truth is a
plain text list of "x_nm,y_nm" lines. All writes go through a
temp-file-then-rename so partially written artifacts never appear.
"""

from __future__ import annotations

import dataclasses
import json
import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, ParameterError
from .imaging import EmitterSet, FrameStack

STACK_MAGIC = b"FLK1"
STACK_VERSION = 1
_STACK_HEADER = struct.Struct("<4sIIIIdd")  # magic, version, T, h, w, pixel_nm, fwhm_nm
STACK_HEADER_BYTES = _STACK_HEADER.size  # 36

# Refuse to allocate stacks beyond this many samples when reading.
_MAX_SAMPLES = 1 << 33


def _atomic_write(path: str, data: bytes):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_stack(path: str, stack: FrameStack):
    header = _STACK_HEADER.pack(
        STACK_MAGIC,
        STACK_VERSION,
        stack.T,
        stack.frame_shape[0],
        stack.frame_shape[1],
        stack.pixel_size_nm,
        stack.fwhm_nm,
    )
    frames = np.ascontiguousarray(stack.frames, dtype="<f4")
    _atomic_write(path, header + frames.tobytes(order="C"))


def read_stack(path: str) -> FrameStack:
    with open(path, "rb") as handle:
        raw = handle.read()
    if len(raw) < STACK_HEADER_BYTES:
        raise FormatError(f"stack file shorter than the {STACK_HEADER_BYTES}-byte header", offset=len(raw))
    magic, version, T, h, w, pixel_nm, fwhm_nm = _STACK_HEADER.unpack_from(raw, 0)
    if magic != STACK_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {STACK_MAGIC!r}", offset=0)
    if version != STACK_VERSION:
        raise FormatError(f"unsupported stack version {version}", offset=4)
    n_samples = T * h * w
    if n_samples <= 0 or n_samples > _MAX_SAMPLES:
        raise FormatError(f"implausible stack shape ({T}, {h}, {w})", offset=8)
    expected = STACK_HEADER_BYTES + 4 * n_samples
    if len(raw) != expected:
        raise FormatError(
            f"stack payload is {len(raw) - STACK_HEADER_BYTES} bytes, expected {4 * n_samples}",
            offset=min(len(raw), expected),
        )
    frames = np.frombuffer(raw, dtype="<f4", offset=STACK_HEADER_BYTES).reshape(T, h, w)
    return FrameStack(frames=frames, pixel_size_nm=pixel_nm, fwhm_nm=fwhm_nm)


def save_array(path: str, array: np.ndarray):
    """Exact float64 round trip for pipeline intermediates (.npy)."""
    buf = _NpyBytes()
    np.save(buf, np.asarray(array, dtype=np.float64))
    _atomic_write(path, buf.getvalue())


def load_array(path: str) -> np.ndarray:
    try:
        return np.load(path, allow_pickle=False)
    except (ValueError, OSError) as exc:
        raise FormatError(f"cannot read array file {path}: {exc}") from exc


class _NpyBytes:
    def __init__(self):
        self._chunks = []

    def write(self, data):
        self._chunks.append(bytes(data))

    def getvalue(self) -> bytes:
        return b"".join(self._chunks)


def write_image_view(path: str, image: np.ndarray, scaling: str = "minmax", value_range=None):
    """16-bit grayscale PGM rendering with the scaling recorded in a sidecar.

    scaling="minmax" maps [min, max] to the full code range; "fixed" maps
    the given value_range=(lo, hi). The sidecar is <path>.json.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2 or not np.all(np.isfinite(img)):
        raise ParameterError("image view needs a finite 2-D image")
    if scaling == "minmax":
        lo, hi = float(img.min()), float(img.max())
    elif scaling == "fixed":
        if value_range is None:
            raise ParameterError("fixed scaling needs value_range=(lo, hi)")
        lo, hi = map(float, value_range)
        if not hi > lo:
            raise ParameterError("value_range must satisfy hi > lo")
    else:
        raise ParameterError(f"unknown scaling {scaling!r}")
    if hi > lo:
        scaled = np.clip((img - lo) / (hi - lo), 0.0, 1.0)
    else:
        scaled = np.full_like(img, 0.5)  # constant image renders mid-gray
    codes = np.round(scaled * 65535.0).astype(">u2")
    h, w = img.shape
    header = f"P5\n{w} {h}\n65535\n".encode("ascii")
    _atomic_write(path, header + codes.tobytes(order="C"))
    sidecar = {"scaling": scaling, "lo": lo, "hi": hi, "maxval": 65535}
    _atomic_write(path + ".json", json.dumps(sidecar, indent=2).encode("utf-8"))


def read_image_view(path: str) -> tuple[np.ndarray, dict]:
    """Inverse of write_image_view (up to 16-bit quantization)."""
    with open(path, "rb") as handle:
        raw = handle.read()
    parts = raw.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"P5":
        raise FormatError("not a binary 16-bit PGM", offset=0)
    try:
        w, h = map(int, parts[1].split())
        maxval = int(parts[2])
    except ValueError as exc:
        raise FormatError(f"bad PGM header: {exc}") from exc
    if maxval != 65535:
        raise FormatError(f"expected 16-bit PGM (maxval 65535), got {maxval}")
    data = parts[3]
    if len(data) != 2 * w * h:
        raise FormatError(f"PGM payload is {len(data)} bytes, expected {2 * w * h}")
    codes = np.frombuffer(data, dtype=">u2").reshape(h, w)
    with open(path + ".json", "r", encoding="utf-8") as handle:
        sidecar = json.load(handle)
    lo, hi = sidecar["lo"], sidecar["hi"]
    img = codes.astype(np.float64) / 65535.0 * (hi - lo) + lo if hi > lo else np.full(
        (h, w), lo, dtype=np.float64
    )
    return img, sidecar


def write_emitters(path: str, emitters: EmitterSet):
    # repr of Python floats round-trips float64 exactly
    lines = [f"# field_size_nm={float(emitters.field_size_nm)!r}"]
    lines += [f"{float(x)!r},{float(y)!r}" for x, y in emitters.positions]
    _atomic_write(path, ("\n".join(lines) + "\n").encode("utf-8"))


def read_emitters(path: str) -> EmitterSet:
    with open(path, "r", encoding="utf-8") as handle:
        lines = [line.strip() for line in handle if line.strip()]
    if not lines or not lines[0].startswith("# field_size_nm="):
        raise FormatError("emitter file must start with a '# field_size_nm=' header")
    try:
        field_size = float(lines[0].split("=", 1)[1])
        positions = [tuple(map(float, line.split(","))) for line in lines[1:]]
    except ValueError as exc:
        raise FormatError(f"bad emitter file line: {exc}") from exc
    return EmitterSet(positions=np.array(positions, dtype=np.float64).reshape(-1, 2),
                      field_size_nm=field_size)


@dataclass
class ExperimentManifest:
    """Everything needed to reproduce one pipeline run.

    Stored as indented JSON; every parameter the stages consume is
    explicit here so reruns are bit-reproducible.
    """

    name: str = "experiment"
    seed: int = 0
    image_size_px: int = 64
    pixel_size_nm: float = 25.0
    fwhm_nm: float = 176.6
    frames: int = 500
    n_filaments: int = 3
    emitters_per_filament: int = 200
    rate_on_per_frame: float = 0.15
    rate_off_per_frame: float = 0.35
    mean_photons_on: float = 300.0
    photon_jitter_fraction: float = 0.2
    background_level: float = 10.0
    noise_variance_s: float = 25.0
    regularizer: str = "l1"  # l1 | l0 | tv | bridge
    reg_strength: float = 3e-4
    reg_strength_is_relative: bool = True  # strength scales with max(covariance)
    sigma: float = 0.05
    tau: float | None = None  # None = largest certified step 1/(lam*L)
    lam: float = 0.99
    solver_max_iters: int = 2000
    solver_tol: float = 1e-9
    support_threshold: float | None = None
    mu: float = 0.1
    beta: float = 0.1
    intensity_max_iters: int = 3000
    intensity_tol: float = 1e-4
    delta_nm: float = 40.0
    bridge: str | None = None  # "host:port" or "spawn:<command line>"

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentManifest":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise FormatError(f"manifest is not valid JSON: {exc}") from exc
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ParameterError(f"unknown manifest fields: {sorted(unknown)}")
        return cls(**data)


def write_manifest(path: str, manifest: ExperimentManifest):
    _atomic_write(path, manifest.to_json().encode("utf-8"))


def read_manifest(path: str) -> ExperimentManifest:
    with open(path, "r", encoding="utf-8") as handle:
        return ExperimentManifest.from_json(handle.read())


def write_metrics_record(path: str, record: dict):
    def _default(value):
        if isinstance(value, (np.floating, np.integer)):
            return value.item()
        raise TypeError(f"not JSON-serializable: {type(value)}")

    _atomic_write(path, json.dumps(record, indent=2, default=_default).encode("utf-8"))


def read_metrics_record(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as handle:
        return json.load(handle)
