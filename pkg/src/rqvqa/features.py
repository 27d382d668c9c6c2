"""Feature sources, sidecar files, toy extractors, and bundle assembly.

A feature source is a named producer at one of four granularities:

    keyframe   one row per key frame            (count = N_z)
    tokens     T rows per key frame             (count = N_z, stored N_z*T x dim)
    chunk      one row per one-second chunk     (count = N_z)
    video      a single row for the whole clip  (count = 1)

Precomputed backbone outputs arrive through RQVF sidecar files; three built-in
toy extractors provide deterministic desk-scale stand-ins. Sidecar values take
precedence over toys for same-named sources.

RQVF sidecar layout (little-endian):
    magic 'RQVF' | version u16 | name_len u16 | name utf-8 | granularity u8
    | count u32 | token_count u32 | dim u32
    | count * max(token_count, 1) * dim float32 values
    | crc32(payload) u32
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    FeatureError,
    SidecarChecksumError,
    SidecarMagicError,
    SidecarShapeError,
    SidecarTruncatedError,
    SidecarVersionError,
)
from .gms import FragmentVolume, make_plan, sample_fragments
from .preproc import VideoFrames, extract_chunks, extract_key_frames

MAGIC = b"RQVF"
VERSION = 1

GRANULARITIES = ("keyframe", "tokens", "chunk", "video")
_GRAN_CODE = {name: code for code, name in enumerate(GRANULARITIES)}

# Concatenation order of source roles in the fused vector: learnable spatial
# first, then temporal motion, then per-frame quality sources, then whole-video
# spatiotemporal sources. Ties within a role break on the source name.
ROLE_ORDER = ("spatial", "temporal", "frame_quality", "video_quality")

# Label sets behind the 495-way frame-quality probability vector
# (9 scenes x 11 distortions x 5 levels).
LIQE_SCENES = ("animal", "cityscape", "human", "indoor scene", "landscape",
               "night scene", "plant", "still-life", "others")
LIQE_DISTORTIONS = ("blur", "color-related", "contrast", "JPEG compression",
                    "JPEG2000 compression", "noise", "overexposure",
                    "quantization", "under-exposure", "spatially-localized",
                    "others")
LIQE_LEVELS = ("bad", "poor", "fair", "good", "perfect")
LIQE_PROMPT = "a photo of a(n) {s} with {d} artifacts, which is of {c} quality"
QALIGN_PROMPT = ("How is the quality of this image? |img| "
                 "The quality of the image is [SCORE_TOKEN]")


@dataclass(frozen=True)
class FeatureSource:
    """Metadata describing one feature producer."""

    name: str
    granularity: str
    dim: int
    role: str = "frame_quality"
    token_count: int = 0
    probability: bool = False        # rows must be nonneg and sum to 1
    prompt_template: str | None = None  # inert metadata for LMM-style sources
    toy: str | None = None           # built-in extractor name, if any

    def __post_init__(self):
        if self.granularity not in GRANULARITIES:
            raise FeatureError(f"unknown granularity {self.granularity!r}")
        if self.role not in ROLE_ORDER:
            raise FeatureError(f"unknown role {self.role!r}")
        if self.dim < 1:
            raise FeatureError(f"{self.name}: dim must be >= 1")
        if self.granularity == "tokens" and self.token_count < 1:
            raise FeatureError(f"{self.name}: tokens source needs token_count")
        if self.granularity != "tokens" and self.token_count:
            raise FeatureError(f"{self.name}: token_count only valid for tokens")


class SourceRegistry:
    """Immutable name-keyed collection of feature sources."""

    def __init__(self, sources):
        self._by_name: dict[str, FeatureSource] = {}
        for src in sources:
            if src.name in self._by_name:
                raise FeatureError(f"duplicate source name {src.name!r}")
            self._by_name[src.name] = src

    def __iter__(self):
        return iter(self._by_name.values())

    def __len__(self):
        return len(self._by_name)

    def __contains__(self, name):
        return name in self._by_name

    def __getitem__(self, name) -> FeatureSource:
        if name not in self._by_name:
            raise FeatureError(f"unknown source {name!r}")
        return self._by_name[name]

    def names(self):
        return list(self._by_name)

    def in_role_order(self) -> list[FeatureSource]:
        return sorted(self, key=lambda s: (ROLE_ORDER.index(s.role), s.name))


def toy_registry() -> SourceRegistry:
    """The three deterministic stand-in extractors."""
    return SourceRegistry([
        FeatureSource("pixelstats", "keyframe", PIXELSTATS_DIM,
                      role="spatial", toy="pixelstats"),
        FeatureSource("motionstats", "chunk", MOTIONSTATS_DIM,
                      role="temporal", toy="motionstats"),
        FeatureSource("fragmentstats", "video", PIXELSTATS_DIM,
                      role="video_quality", toy="fragmentstats"),
    ])


def backbone_registry(spatial_dim: int = 1024, temporal_dim: int = 256,
                      lmm_dim: int = 4096, spatiotemporal_dim: int = 768,
                      spatial_tokens: int = 0) -> SourceRegistry:
    """Sidecar-fed registry shaped like the full-scale pipeline.

    Dims are configuration, not constants; the probability source width is
    fixed by its label space. spatial_tokens > 0 switches the spatial source
    to an unpooled token grid for learnable attention pooling.
    """
    if spatial_tokens:
        spatial = FeatureSource("spatial", "tokens", spatial_dim,
                                role="spatial", token_count=spatial_tokens)
    else:
        spatial = FeatureSource("spatial", "keyframe", spatial_dim,
                                role="spatial")
    return SourceRegistry([
        spatial,
        FeatureSource("temporal", "chunk", temporal_dim, role="temporal"),
        FeatureSource("frame_quality_probs", "keyframe",
                      len(LIQE_SCENES) * len(LIQE_DISTORTIONS) * len(LIQE_LEVELS),
                      role="frame_quality", probability=True,
                      prompt_template=LIQE_PROMPT),
        FeatureSource("frame_quality_lmm", "keyframe", lmm_dim,
                      role="frame_quality", prompt_template=QALIGN_PROMPT),
        FeatureSource("spatiotemporal", "video", spatiotemporal_dim,
                      role="video_quality"),
    ])


@dataclass
class FeatureBundle:
    """Per-video feature matrices keyed by source name (float64 internally)."""

    video_id: str
    n_keyframes: int
    matrices: dict[str, np.ndarray] = field(default_factory=dict)

    def rows_expected(self, source: FeatureSource) -> int:
        if source.granularity == "video":
            return 1
        if source.granularity == "tokens":
            return self.n_keyframes * source.token_count
        return self.n_keyframes

    def validate(self, registry: SourceRegistry) -> None:
        missing = [s.name for s in registry if s.name not in self.matrices]
        if missing:
            raise FeatureError(f"missing sources: {', '.join(sorted(missing))}")
        for source in registry:
            mat = self.matrices[source.name]
            expected = (self.rows_expected(source), source.dim)
            if mat.shape != expected:
                raise FeatureError(
                    f"{source.name}: shape {mat.shape} != expected {expected} "
                    f"(N_z={self.n_keyframes})"
                )
            if not np.all(np.isfinite(mat)):
                raise FeatureError(f"{source.name}: non-finite values")
            if source.probability:
                if np.any(mat < 0):
                    raise FeatureError(
                        f"{source.name}: probability rows must be nonnegative")
                sums = mat.sum(axis=1)
                if np.any(np.abs(sums - 1.0) > 1e-4):
                    bad = int(np.argmax(np.abs(sums - 1.0)))
                    raise FeatureError(
                        f"{source.name}: probability rows must sum to 1 "
                        f"(row {bad} sums to {sums[bad]:.6f})"
                    )


# ---------------------------------------------------------------------------
# Sidecar IO


def save_sidecar(source: FeatureSource, matrix: np.ndarray,
                 path: str | Path) -> Path:
    """Write one source's matrix as an RQVF file; round-trips bit-exactly."""
    matrix = np.ascontiguousarray(matrix, dtype=np.float32)
    if matrix.ndim != 2 or matrix.shape[1] != source.dim:
        raise SidecarShapeError(
            f"{source.name}: matrix {matrix.shape} does not match dim {source.dim}")
    rows = matrix.shape[0]
    if source.granularity == "tokens":
        if rows % source.token_count:
            raise SidecarShapeError(
                f"{source.name}: {rows} rows not divisible by "
                f"token_count {source.token_count}")
        count = rows // source.token_count
    elif source.granularity == "video":
        if rows != 1:
            raise SidecarShapeError(f"{source.name}: video source needs 1 row")
        count = 1
    else:
        count = rows

    name_bytes = source.name.encode("utf-8")
    header = MAGIC + struct.pack(
        "<HH", VERSION, len(name_bytes)) + name_bytes + struct.pack(
        "<BIII", _GRAN_CODE[source.granularity], count, source.token_count,
        source.dim)
    payload = matrix.tobytes()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(header + payload + struct.pack("<I", zlib.crc32(payload)))
    return path


def load_sidecar(path: str | Path,
                 expect: FeatureSource | None = None):
    """Read an RQVF file; returns (name, granularity, token_count, matrix).

    The matrix is float32 exactly as stored. When `expect` is given, the
    header must agree with the declared source.
    """
    data = Path(path).read_bytes()
    if len(data) < 8:
        raise SidecarTruncatedError(f"{path}: truncated header")
    if data[:4] != MAGIC:
        raise SidecarMagicError(f"{path}: bad magic {data[:4]!r}")
    version, name_len = struct.unpack_from("<HH", data, 4)
    if version != VERSION:
        raise SidecarVersionError(f"{path}: version {version}, expected {VERSION}")
    offset = 8
    if len(data) < offset + name_len + 13:
        raise SidecarTruncatedError(f"{path}: truncated header")
    name = data[offset:offset + name_len].decode("utf-8")
    offset += name_len
    gran_code, count, token_count, dim = struct.unpack_from("<BIII", data, offset)
    offset += 13
    if gran_code >= len(GRANULARITIES):
        raise SidecarShapeError(f"{path}: unknown granularity code {gran_code}")
    granularity = GRANULARITIES[gran_code]

    rows = count * max(token_count, 1)
    payload_bytes = rows * dim * 4
    if len(data) < offset + payload_bytes + 4:
        raise SidecarTruncatedError(f"{path}: truncated payload")
    payload = data[offset:offset + payload_bytes]
    (crc,) = struct.unpack_from("<I", data, offset + payload_bytes)
    if crc != zlib.crc32(payload):
        raise SidecarChecksumError(f"{path}: payload checksum mismatch")
    matrix = np.frombuffer(payload, dtype="<f4").reshape(rows, dim)

    if expect is not None:
        if dim != expect.dim:
            raise SidecarShapeError(
                f"{path}: dim mismatch (file {dim}, source {expect.dim})")
        if granularity != expect.granularity:
            raise SidecarShapeError(
                f"{path}: granularity {granularity}, source expects "
                f"{expect.granularity}")
        if token_count != expect.token_count:
            raise SidecarShapeError(
                f"{path}: token_count mismatch (file {token_count}, "
                f"source {expect.token_count})")
    return name, granularity, token_count, matrix


# ---------------------------------------------------------------------------
# Toy extractors

PIXELSTATS_DIM = 16
MOTIONSTATS_DIM = 8

_LUMA = np.array([0.299, 0.587, 0.114])


def _luma(frame: np.ndarray) -> np.ndarray:
    return np.asarray(frame, dtype=np.float64) @ _LUMA


def toy_pixelstats(frame: np.ndarray) -> np.ndarray:
    """16 deterministic frame statistics, each scaled into [0, 1].

    Per-channel mean and std (6), mean and std of the absolute 4-neighbour
    luma Laplacian (2), and an 8-bin luma histogram (8).
    """
    f = np.asarray(frame, dtype=np.float64)
    means = f.reshape(-1, 3).mean(axis=0) / 255.0
    stds = f.reshape(-1, 3).std(axis=0) / 127.5

    y = _luma(f)
    lap = (y[:-2, 1:-1] + y[2:, 1:-1] + y[1:-1, :-2] + y[1:-1, 2:]
           - 4.0 * y[1:-1, 1:-1])
    energy = np.abs(lap)
    if energy.size:
        lap_stats = np.array([energy.mean() / 1020.0, energy.std() / 510.0])
    else:
        lap_stats = np.zeros(2)

    hist, _ = np.histogram(y, bins=8, range=(0.0, 256.0))
    hist = hist / y.size
    return np.concatenate([means, stds, lap_stats, hist])


def toy_motionstats(chunk: np.ndarray) -> np.ndarray:
    """8 statistics of consecutive-frame absolute differences, in [0, 1]."""
    c = np.asarray(chunk, dtype=np.float64)
    if c.shape[0] < 2:
        raise FeatureError("motion statistics need a chunk of >= 2 frames")
    diffs = np.abs(np.diff(c, axis=0))
    per_pair = diffs.reshape(diffs.shape[0], -1).mean(axis=1)
    stats = np.array([per_pair.mean() / 255.0, per_pair.std() / 127.5,
                      per_pair.max() / 255.0])
    hist, _ = np.histogram(diffs, bins=5, range=(0.0, 256.0))
    hist = hist / diffs.size
    return np.concatenate([stats, hist])


def toy_fragmentstats(fragments: FragmentVolume) -> np.ndarray:
    """Pixel statistics of the temporally averaged fragment frame."""
    mean_frame = np.asarray(fragments.frames, dtype=np.float64).mean(axis=0)
    return toy_pixelstats(mean_frame)


# ---------------------------------------------------------------------------
# Bundle assembly


@dataclass(frozen=True)
class ExtractionConfig:
    """Geometry knobs for the toy extractors (fragment sampling plan)."""

    gms_grid_count: int = 7
    gms_patch_size: int = 32
    gms_seed: int = 0
    gms_all_frames: bool = False


def _toy_matrix(toy: str, video: VideoFrames,
                extraction: ExtractionConfig) -> np.ndarray:
    if toy == "pixelstats":
        keys = extract_key_frames(video)
        return np.stack([toy_pixelstats(f) for f in keys.frames])
    if toy == "motionstats":
        chunks = extract_chunks(video)
        return np.stack([toy_motionstats(c) for c in chunks.chunks])
    if toy == "fragmentstats":
        frames = video if extraction.gms_all_frames else extract_key_frames(video)
        plan = make_plan(video.width, video.height, extraction.gms_grid_count,
                         extraction.gms_patch_size, extraction.gms_seed)
        return toy_fragmentstats(sample_fragments(frames, plan))[None, :]
    raise FeatureError(f"unknown toy extractor {toy!r}")


def assemble_bundle(video: VideoFrames | None, registry: SourceRegistry,
                    sidecar_dir: str | Path | None = None,
                    video_id: str = "video",
                    extraction: ExtractionConfig = ExtractionConfig(),
                    ) -> FeatureBundle:
    """Resolve every registered source (sidecar first, toy fallback).

    With video=None all sources must resolve from sidecars; N_z is then taken
    from the sidecar counts, which must agree across sources.
    """
    sidecar_dir = Path(sidecar_dir) if sidecar_dir is not None else None
    matrices: dict[str, np.ndarray] = {}
    counts: dict[str, int] = {}
    missing: list[str] = []

    for source in registry:
        sidecar = (sidecar_dir / f"{source.name}.rqvf") if sidecar_dir else None
        if sidecar is not None and sidecar.is_file():
            _, _, _, mat = load_sidecar(sidecar, expect=source)
            matrices[source.name] = mat.astype(np.float64)
            rows = mat.shape[0]
            counts[source.name] = (
                1 if source.granularity == "video"
                else rows // max(source.token_count, 1))
        elif source.toy is not None and video is not None:
            matrices[source.name] = _toy_matrix(source.toy, video, extraction)
        else:
            missing.append(source.name)
    if missing:
        raise FeatureError(
            f"{video_id}: unresolvable sources: {', '.join(sorted(missing))}")

    if video is not None:
        n_z = video.frame_count // video.frame_rate
    else:
        per_index = [c for name, c in counts.items()
                     if registry[name].granularity != "video"]
        if not per_index:
            raise FeatureError(
                f"{video_id}: cannot infer key-frame count from "
                f"video-granularity sidecars alone")
        n_z = per_index[0]
        if any(c != n_z for c in per_index):
            raise FeatureError(f"{video_id}: sidecar counts disagree: {counts}")

    bundle = FeatureBundle(video_id=video_id, n_keyframes=n_z, matrices=matrices)
    bundle.validate(registry)
    return bundle
