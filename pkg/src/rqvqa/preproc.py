"""Video representation, key-frame/chunk extraction, and branch geometry.

Videos are plain directories of raw RGB frames plus a tiny metadata file, so
everything stays deterministic and decoder-free:

    meta.txt            four lines: width=, height=, fps=, frames=
    frame_000000.rgb    height*width*3 bytes, row-major, interleaved RGB

All operations are pure; resizing uses bilinear interpolation with half-pixel
center alignment.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import GeometryError, VideoFormatError

META_NAME = "meta.txt"
FRAME_PATTERN = "frame_{:06d}.rgb"


@dataclass(frozen=True)
class VideoFrames:
    """Decoded frame sequence with geometry and frame-rate metadata.

    frames has shape (frame_count, height, width, 3), dtype uint8.
    """

    frames: np.ndarray
    width: int
    height: int
    frame_rate: int
    frame_count: int

    def __post_init__(self):
        f = self.frames
        if f.ndim != 4 or f.shape[3] != 3 or f.dtype != np.uint8:
            raise VideoFormatError(
                f"frames must be (N, H, W, 3) uint8, got {f.shape} {f.dtype}"
            )
        if f.shape != (self.frame_count, self.height, self.width, 3):
            raise VideoFormatError(
                f"metadata {self.frame_count}x{self.height}x{self.width} "
                f"inconsistent with frame array {f.shape}"
            )
        if not isinstance(self.frame_rate, int) or self.frame_rate < 1:
            raise VideoFormatError(
                f"frame rate must be a positive integer, got {self.frame_rate!r}"
            )
        if self.frame_count < self.frame_rate:
            raise VideoFormatError(
                f"video shorter than one second ({self.frame_count} frames @ "
                f"{self.frame_rate} fps)"
            )

    @classmethod
    def from_array(cls, frames: np.ndarray, frame_rate: int) -> "VideoFrames":
        frames = np.ascontiguousarray(frames, dtype=np.uint8)
        n, h, w = frames.shape[:3]
        return cls(frames=frames, width=w, height=h, frame_rate=frame_rate,
                   frame_count=n)


@dataclass(frozen=True)
class KeyFrameSet:
    """First frame of every full second: key frame i is source frame i*r."""

    frames: np.ndarray          # (count, H, W, 3)
    source_indices: np.ndarray  # (count,)
    count: int


@dataclass(frozen=True)
class ChunkSet:
    """One-second chunks: chunk i spans frames [i*r, (i+1)*r - 1]."""

    chunks: np.ndarray  # (count, r, H, W, 3)
    count: int


def load_raw_video(directory: str | Path) -> VideoFrames:
    """Read a raw video directory back into memory, validating as it goes."""
    directory = Path(directory)
    meta_path = directory / META_NAME
    if not meta_path.is_file():
        raise VideoFormatError(f"{meta_path} missing")

    meta: dict[str, int] = {}
    for lineno, line in enumerate(meta_path.read_text().splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise VideoFormatError(f"{meta_path}:{lineno}: expected key=value")
        try:
            meta[key.strip()] = int(value.strip())
        except ValueError:
            raise VideoFormatError(
                f"{meta_path}:{lineno}: {key.strip()} must be an integer, "
                f"got {value.strip()!r}"
            ) from None
    missing = [k for k in ("width", "height", "fps", "frames") if k not in meta]
    if missing:
        raise VideoFormatError(f"{meta_path}: missing keys {missing}")

    w, h, fps, n = meta["width"], meta["height"], meta["fps"], meta["frames"]
    if w < 1 or h < 1 or fps < 1 or n < 1:
        raise VideoFormatError(f"{meta_path}: non-positive metadata {meta}")

    frame_bytes = h * w * 3
    frames = np.empty((n, h, w, 3), dtype=np.uint8)
    for i in range(n):
        path = directory / FRAME_PATTERN.format(i)
        if not path.is_file():
            raise VideoFormatError(f"frame {i} missing ({path})")
        data = path.read_bytes()
        if len(data) != frame_bytes:
            raise VideoFormatError(
                f"frame {i} has {len(data)} bytes, expected {frame_bytes}"
            )
        frames[i] = np.frombuffer(data, dtype=np.uint8).reshape(h, w, 3)
    return VideoFrames(frames=frames, width=w, height=h, frame_rate=fps,
                       frame_count=n)


def save_raw_video(video: VideoFrames, directory: str | Path) -> Path:
    """Write a VideoFrames as a raw video directory (inverse of load)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = (f"width={video.width}\nheight={video.height}\n"
            f"fps={video.frame_rate}\nframes={video.frame_count}\n")
    (directory / META_NAME).write_text(meta)
    for i in range(video.frame_count):
        (directory / FRAME_PATTERN.format(i)).write_bytes(
            np.ascontiguousarray(video.frames[i]).tobytes())
    return directory


def extract_key_frames(video: VideoFrames) -> KeyFrameSet:
    """Key frame i is frame i*r; the trailing partial second is discarded."""
    r = video.frame_rate
    if video.frame_count < r:
        raise VideoFormatError("video shorter than one second")
    n_z = video.frame_count // r
    idx = np.arange(n_z) * r
    return KeyFrameSet(frames=video.frames[idx], source_indices=idx, count=n_z)


def extract_chunks(video: VideoFrames) -> ChunkSet:
    """Split into N_z chunks of exactly r consecutive frames each."""
    r = video.frame_rate
    if video.frame_count < r:
        raise VideoFormatError("video shorter than one second")
    n_z = video.frame_count // r
    chunks = video.frames[: n_z * r].reshape(n_z, r, video.height, video.width, 3)
    return ChunkSet(chunks=chunks, count=n_z)


def _iround(x: float) -> int:
    # round-half-up keeps the geometry convention platform independent
    return int(np.floor(x + 0.5))


def _resize_axis(img: np.ndarray, out_len: int, axis: int) -> np.ndarray:
    """Bilinear resample of one axis with half-pixel center alignment."""
    in_len = img.shape[axis]
    src = (np.arange(out_len, dtype=np.float64) + 0.5) * (in_len / out_len) - 0.5
    src = np.clip(src, 0.0, in_len - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, in_len - 1)
    frac = src - i0
    a = np.take(img, i0, axis=axis).astype(np.float64)
    b = np.take(img, i1, axis=axis).astype(np.float64)
    shape = [1] * img.ndim
    shape[axis] = out_len
    frac = frac.reshape(shape)
    return a * (1.0 - frac) + b * frac


def _resize(frame: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    h, w = frame.shape[:2]
    if (out_h, out_w) == (h, w):
        return frame.copy()  # bit-exact pass-through
    out = _resize_axis(frame, out_h, axis=0)
    out = _resize_axis(out, out_w, axis=1)
    if np.issubdtype(frame.dtype, np.integer):
        return np.clip(np.rint(out), 0, 255).astype(frame.dtype)
    return out


def resize_min_side(frame: np.ndarray, target: int) -> np.ndarray:
    """Scale so the shorter side equals target, preserving aspect ratio."""
    if target < 1:
        raise GeometryError(f"target must be >= 1, got {target}")
    h, w = frame.shape[:2]
    if h < 1 or w < 1:
        raise GeometryError("zero-sized frame")
    if h <= w:
        out_h, out_w = target, _iround(w * target / h)
    else:
        out_w, out_h = target, _iround(h * target / w)
    return _resize(frame, out_w, out_h)


def resize_exact(frame: np.ndarray, width: int, height: int) -> np.ndarray:
    """Scale to width x height, ignoring aspect ratio."""
    if width < 1 or height < 1:
        raise GeometryError(f"target must be >= 1, got {width}x{height}")
    if frame.shape[0] < 1 or frame.shape[1] < 1:
        raise GeometryError("zero-sized frame")
    return _resize(frame, width, height)


def crop(frame: np.ndarray, size: int, mode: str = "center",
         seed: int | None = None) -> np.ndarray:
    """Take a size x size window; offsets are centered or seeded-uniform."""
    h, w = frame.shape[:2]
    if h < size or w < size:
        raise GeometryError(f"frame {w}x{h} smaller than crop size {size}")
    if mode == "center":
        ox = (w - size) // 2
        oy = (h - size) // 2
    elif mode == "random":
        rng = np.random.default_rng(seed)
        # x offset drawn first, then y
        ox = int(rng.integers(0, w - size + 1))
        oy = int(rng.integers(0, h - size + 1))
    else:
        raise GeometryError(f"unknown crop mode {mode!r}")
    return frame[oy:oy + size, ox:ox + size].copy()
