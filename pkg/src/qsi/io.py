"""File formats: QSIF frame stacks, CSV/PGM maps, masks and CSV reports.

QSIF layout (all little-endian)::

    offset  size  field
         0     4  magic "QSIF"
         4     2  version (1)
         6     2  header size in bytes (128)
         8     4  width
        12     4  height
        16     4  frames per cluster (<= 64)
        20     4  reserved, zero
        24     8  usable-frame bitmap (bit i set = frame i usable)
        32     8  cluster count
        40     8  id of the first cluster (ids are consecutive)
        48     8  exposure, microseconds (float64)
        56     8  duty cycle, microseconds (float64)
        64     8  RNG seed tag
        72    32  scene digest (SHA-256 of the optical setup)
       104    24  reserved, zero
       128     -  payload: cluster, frame, beam (n1 then n2), row-major float32
"""

from __future__ import annotations

import csv
import io as _stdio
import math
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from qsi.errors import DomainError, FormatError, QsiError
from qsi.simulator import MAX_PIXELS, FrameCluster, PixelGrid, TransmissionMask

MAGIC = b"QSIF"
VERSION = 1
HEADER_SIZE = 128
_HEADER = struct.Struct("<4sHHIIIIQQQddQ32s")
_PAYLOAD_DTYPE = np.dtype("<f4")


@dataclass(frozen=True)
class StackHeader:
    width: int
    height: int
    cluster_frames: int
    usable_indices: tuple[int, ...]
    cluster_count: int
    first_cluster_id: int = 0
    exposure_us: float = 1.7
    duty_cycle_us: float = 544.0
    seed: int = 0
    scene_digest: bytes = bytes(32)

    @property
    def cluster_bytes(self) -> int:
        return self.cluster_frames * 2 * self.width * self.height * _PAYLOAD_DTYPE.itemsize

    @property
    def file_size(self) -> int:
        return HEADER_SIZE + self.cluster_count * self.cluster_bytes

    def pack(self) -> bytes:
        bitmap = 0
        for i in self.usable_indices:
            bitmap |= 1 << i
        raw = _HEADER.pack(
            MAGIC, VERSION, HEADER_SIZE, self.width, self.height, self.cluster_frames, 0,
            bitmap, self.cluster_count, self.first_cluster_id, self.exposure_us,
            self.duty_cycle_us, self.seed, self.scene_digest,
        )
        return raw + bytes(HEADER_SIZE - len(raw))


def _unpack_header(raw: bytes) -> StackHeader:
    if len(raw) < HEADER_SIZE:
        raise FormatError(f"file too short for a {HEADER_SIZE}-byte QSIF header", len(raw))
    (magic, version, hsize, width, height, frames, reserved, bitmap, count, first_id,
     exposure, duty, seed, digest) = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC.decode()!r}", 0)
    if version != VERSION:
        raise FormatError(f"unsupported QSIF version {version}, expected {VERSION}", 4)
    if hsize != HEADER_SIZE:
        raise FormatError(f"header size {hsize}, expected {HEADER_SIZE}", 6)
    if reserved != 0:
        raise FormatError("reserved header field is not zero", 20)
    if any(raw[_HEADER.size:HEADER_SIZE]):
        raise FormatError("reserved header tail is not zero", _HEADER.size)
    if count > 0:
        if width < 1 or height < 1:
            raise FormatError(f"invalid grid {width}x{height}", 8)
        if width * height > MAX_PIXELS:
            raise FormatError(f"grid {width}x{height} exceeds the pixel limit", 8)
        if not 1 <= frames <= 64:
            raise FormatError(f"frames per cluster {frames} outside [1, 64]", 16)
        if bitmap == 0:
            raise FormatError("no usable frames declared", 24)
    if frames < 64 and bitmap >> frames:
        raise FormatError("usable bitmap marks frames beyond the cluster", 24)
    if not (math.isfinite(exposure) and exposure > 0):
        raise FormatError(f"invalid exposure {exposure}", 48)
    if not (math.isfinite(duty) and duty > 0):
        raise FormatError(f"invalid duty cycle {duty}", 56)
    usable = tuple(i for i in range(64) if bitmap >> i & 1)
    return StackHeader(width, height, frames, usable, count, first_id, exposure, duty, seed, digest)


def read_stack_header(path) -> StackHeader:
    path = Path(path)
    with open(path, "rb") as fh:
        raw = fh.read(HEADER_SIZE)
    header = _unpack_header(raw)
    size = path.stat().st_size
    if size != header.file_size:
        raise FormatError(
            f"payload length mismatch: file has {size} bytes, header implies {header.file_size}",
            min(size, header.file_size),
        )
    return header


def iter_frame_stack(path) -> Iterator[FrameCluster]:
    """Yield the clusters of a QSIF file one at a time."""
    header = read_stack_header(path)
    shape = (header.cluster_frames, 2, header.height, header.width)
    n = int(np.prod(shape))
    with open(path, "rb") as fh:
        fh.seek(HEADER_SIZE)
        for i in range(header.cluster_count):
            offset = HEADER_SIZE + i * header.cluster_bytes
            buf = fh.read(header.cluster_bytes)
            if len(buf) != header.cluster_bytes:
                raise FormatError("truncated payload", offset + len(buf))
            data = np.frombuffer(buf, dtype=_PAYLOAD_DTYPE, count=n)
            bad = ~np.isfinite(data)
            if bad.any():
                first = int(np.argmax(bad))
                raise FormatError("non-finite count in payload", offset + 4 * first)
            frames = data.astype(np.float32).reshape(shape)
            yield FrameCluster(frames, header.usable_indices, header.first_cluster_id + i, header.seed)


def read_frame_stack(path) -> list[FrameCluster]:
    return list(iter_frame_stack(path))


def _atomic_writer(path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".part", dir=path.parent)
    return os.fdopen(fd, "w+b"), Path(tmp)


def write_frame_stack(
    clusters: Iterable[FrameCluster],
    path,
    *,
    exposure_us: float = 1.7,
    duty_cycle_us: float = 544.0,
    scene_digest: bytes = bytes(32),
    seed: int | None = None,
) -> StackHeader:
    """Stream clusters into a QSIF file; the file only appears once complete.

    Clusters must share geometry, usable indices and seed tag, and carry
    consecutive ids.
    """
    path = Path(path)
    if len(scene_digest) != 32:
        raise DomainError("scene digest must be 32 bytes")
    fh, tmp = _atomic_writer(path)
    try:
        with fh:
            fh.write(bytes(HEADER_SIZE))
            first = None
            count = 0
            for c in clusters:
                frames = c.frames
                if first is None:
                    first = c
                    if seed is not None and seed != c.seed_tag:
                        raise DomainError("seed does not match the clusters' seed tag")
                    if frames.shape[0] > 64:
                        raise DomainError("QSIF holds at most 64 frames per cluster")
                elif (
                    frames.shape != first.frames.shape
                    or c.usable_indices != first.usable_indices
                    or c.seed_tag != first.seed_tag
                ):
                    raise DomainError("clusters differ in geometry, usable frames or seed tag")
                if c.cluster_id != first.cluster_id + count:
                    raise DomainError(f"cluster ids must be consecutive, got {c.cluster_id}")
                fh.write(np.ascontiguousarray(frames, dtype=_PAYLOAD_DTYPE).tobytes())
                count += 1
            if first is None:
                header = StackHeader(0, 0, 0, (), 0, 0, exposure_us, duty_cycle_us,
                                     0 if seed is None else seed, scene_digest)
            else:
                f, _, h, w = first.frames.shape
                header = StackHeader(w, h, f, first.usable_indices, count, first.cluster_id,
                                     exposure_us, duty_cycle_us, first.seed_tag, scene_digest)
            fh.seek(0)
            fh.write(header.pack())
        os.replace(tmp, path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise
    return header


# ---------------------------------------------------------------------------
# Maps: CSV and PGM
# ---------------------------------------------------------------------------
def _map_array(map_like):
    from qsi.pipeline import TransmissionMap, VarianceMap

    meta = {}
    if isinstance(map_like, VarianceMap):
        values, excluded = map_like.v, map_like.excluded
        meta = {"kind": "variance", "cluster_count": map_like.cluster_count,
                "bin_radius": map_like.bin_radius}
    elif isinstance(map_like, TransmissionMap):
        values, excluded = map_like.t_est, map_like.excluded
        meta = {"kind": "transmission", "cluster_count": map_like.probe.cluster_count,
                "bin_radius": map_like.probe.bin_radius}
    else:
        values = np.asarray(map_like, dtype=np.float64)
        excluded = ~np.isfinite(values)
    values = np.where(excluded, np.nan, np.asarray(values, dtype=np.float64))
    if values.ndim != 2:
        raise DomainError("maps must be 2-D")
    return values, excluded, meta


def _fmt(x: float) -> str:
    return "nan" if math.isnan(x) else repr(float(x))


def write_map(map_like, path, format: str = "csv", metadata: Mapping | None = None) -> None:
    """Write a map as CSV (NaN marks excluded pixels) or as a 16-bit PGM.

    PGM output records its linear scaling in a ``# qsi-scale`` comment; if any
    pixel is excluded it is written as 0 and a ``<name>.flags.pgm`` sidecar
    marks it with 255.
    """
    path = Path(path)
    values, excluded, meta = _map_array(map_like)
    meta.update(metadata or {})
    h, w = values.shape
    fmt = format.lower()
    try:
        if fmt == "csv":
            buf = _stdio.StringIO()
            buf.write(f"# width={w}\n# height={h}\n")
            for k in sorted(meta):
                buf.write(f"# {k}={meta[k]}\n")
            for row in values:
                buf.write(",".join(_fmt(x) for x in row) + "\n")
            path.write_text(buf.getvalue())
        elif fmt in ("pgm", "p5", "p2"):
            valid = values[~excluded]
            lo = float(valid.min()) if valid.size else 0.0
            hi = float(valid.max()) if valid.size else 0.0
            maxval = 65535
            scale = (hi - lo) if hi > lo else 1.0
            levels = np.zeros((h, w), dtype=np.int64)
            levels[~excluded] = np.rint((values[~excluded] - lo) / scale * maxval)
            comments = [f"qsi-scale min={_fmt(lo)} max={_fmt(hi)}"]
            comments += [f"{k}={meta[k]}" for k in sorted(meta)]
            write_pgm(path, levels, maxval, comments, binary=fmt != "p2")
            flags = path.with_name(path.stem + ".flags.pgm")
            if excluded.any():
                write_pgm(flags, np.where(excluded, 255, 0), 255, ["qsi-flags 255=excluded"], binary=True)
        else:
            raise DomainError(f"unknown map format {format!r}")
    except OSError as exc:
        raise QsiError(f"cannot write {path}: {exc}") from exc


def read_map_csv(path) -> tuple[np.ndarray, dict[str, str]]:
    """Read a CSV map written by :func:`write_map`; returns (values, metadata)."""
    meta = {}
    rows = []
    try:
        text = Path(path).read_text()
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: not a text CSV map", exc.start) from exc
    for lineno, line in enumerate(text.splitlines(), 1):
        if line.startswith("#"):
            key, _, val = line[1:].strip().partition("=")
            meta[key.strip()] = val.strip()
        elif line.strip():
            try:
                rows.append([float(x) for x in line.split(",")])
            except ValueError as exc:
                raise FormatError(f"{path}: line {lineno}: {exc}") from exc
    if not rows or len({len(r) for r in rows}) != 1:
        raise FormatError(f"{path}: ragged or empty CSV map")
    return np.array(rows), meta


def write_pgm(path, levels: np.ndarray, maxval: int, comments: Sequence[str] = (), binary: bool = True) -> None:
    levels = np.asarray(levels)
    h, w = levels.shape
    head = ("P5" if binary else "P2") + "\n"
    head += "".join(f"# {c}\n" for c in comments)
    head += f"{w} {h}\n{maxval}\n"
    if binary:
        dtype = ">u2" if maxval > 255 else "u1"
        body = np.ascontiguousarray(levels, dtype=dtype).tobytes()
    else:
        body = "\n".join(" ".join(str(int(v)) for v in row) for row in levels).encode() + b"\n"
    Path(path).write_bytes(head.encode("ascii") + body)


def read_pgm(path) -> tuple[np.ndarray, int, list[str]]:
    """Parse a P2 or P5 graymap; returns (levels, maxval, comments)."""
    data = Path(path).read_bytes()
    if data[:2] not in (b"P2", b"P5"):
        raise FormatError(f"{path}: not a P2/P5 graymap", 0)
    pos = 2
    tokens = []
    comments = []
    while len(tokens) < 3:
        if pos >= len(data):
            raise FormatError(f"{path}: truncated graymap header", pos)
        ch = data[pos:pos + 1]
        if ch == b"#":
            end = data.find(b"\n", pos)
            end = len(data) if end < 0 else end
            comments.append(data[pos + 1:end].decode("ascii", "replace").strip())
            pos = end + 1
        elif ch.isspace():
            pos += 1
        else:
            start = pos
            while pos < len(data) and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
                pos += 1
            try:
                tokens.append(int(data[start:pos]))
            except ValueError as exc:
                raise FormatError(f"{path}: bad graymap header token", start) from exc
    w, h, maxval = tokens
    if w < 1 or h < 1 or w * h > MAX_PIXELS or not 1 <= maxval <= 65535:
        raise FormatError(f"{path}: invalid graymap geometry {w}x{h}/{maxval}", 2)
    if data[:2] == b"P5":
        pos += 1 if pos < len(data) and data[pos:pos + 1].isspace() else 0
        dtype = np.dtype(">u2" if maxval > 255 else "u1")
        need = w * h * dtype.itemsize
        if len(data) - pos < need:
            raise FormatError(f"{path}: truncated graymap payload", len(data))
        levels = np.frombuffer(data, dtype=dtype, count=w * h, offset=pos).reshape(h, w)
    else:
        try:
            vals = [int(t) for t in data[pos:].split()]
        except ValueError as exc:
            raise FormatError(f"{path}: non-integer graymap sample", pos) from exc
        if len(vals) < w * h:
            raise FormatError(f"{path}: truncated graymap payload", len(data))
        levels = np.array(vals[: w * h]).reshape(h, w)
    levels = levels.astype(np.int64)
    if (levels > maxval).any():
        raise FormatError(f"{path}: sample exceeds maxval {maxval}", pos)
    return levels, maxval, comments


def read_mask(path, pixel_pitch: float | None = None) -> TransmissionMask:
    """Load an object mask from a P2/P5 graymap (t = level / maxval) or a CSV of reals."""
    path = Path(path)
    head = path.read_bytes()[:2]
    if head in (b"P2", b"P5"):
        levels, maxval, _ = read_pgm(path)
        t = levels / float(maxval)
    else:
        t, _ = read_map_csv(path)
        bad = ~((t >= 0.0) & (t <= 1.0))
        if bad.any():
            cells = [f"(row {r}, col {c})={t[r, c]}" for r, c in zip(*np.nonzero(bad))]
            more = "" if len(cells) <= 10 else f" and {len(cells) - 10} more"
            raise DomainError(f"{path}: mask values outside [0, 1] at " + ", ".join(cells[:10]) + more)
    h, w = t.shape
    grid = PixelGrid(w, h) if pixel_pitch is None else PixelGrid(w, h, pixel_pitch)
    return TransmissionMask(grid, t)


def write_mask(mask: TransmissionMask, path) -> None:
    """Save a mask as 16-bit P5 if it is exactly representable, otherwise as CSV."""
    levels = mask.t * 65535
    if np.array_equal(levels, np.rint(levels)) and Path(path).suffix.lower() == ".pgm":
        write_pgm(path, levels.astype(np.int64), 65535, ["qsi mask"], binary=True)
    else:
        write_map(mask.t, path, "csv")


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------
SNR_REPORT_COLUMNS = ("n_mean", "snr_sim", "snr_theory", "rel_err")


def write_report(rows: Sequence[Mapping], path, columns: Sequence[str] | None = None) -> None:
    """CSV report; columns default to the keys of the first row, in order."""
    path = Path(path)
    if columns is None:
        columns = list(rows[0].keys()) if rows else []
    buf = _stdio.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        out = []
        for c in columns:
            v = row.get(c, "")
            out.append(_fmt(v) if isinstance(v, float) else str(v))
        writer.writerow(out)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(buf.getvalue())
    except OSError as exc:
        raise QsiError(f"cannot write {path}: {exc}") from exc


def read_report(path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
