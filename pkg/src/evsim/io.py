"""File formats: binary PGM, frame directories and manifests, event CSV, heatmaps."""
from __future__ import annotations

import csv
import re
from pathlib import Path

import numpy as np

from .types import EVENT_DTYPE, CisFrame, EventFrame, IntensityFrame

__all__ = [
    "read_pgm",
    "write_pgm",
    "read_frame_dir",
    "write_frame_dir",
    "read_image_sequence",
    "write_cis_frames",
    "read_cis_frames",
    "write_events_csv",
    "read_events_csv",
    "write_event_frames",
    "read_event_frames",
    "write_heatmap",
    "read_heatmap",
]

_FRAME_RE = re.compile(r"^frame_(\d+)\.pgm$")
EVENT_FRAME_GRAY = {0: 128, 1: 255, -1: 0}
_CSV_CHUNK = 1 << 20


def _tokens(buf: bytes, count: int):
    """Read ``count`` whitespace-separated header tokens, skipping comments."""
    out, pos = [], 0
    while len(out) < count:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated PGM header")
        out.append(buf[start:pos])
    return out, pos + 1  # exactly one whitespace byte precedes the raster


def read_pgm(path) -> tuple:
    """Read a binary (P5) PGM; returns ``(array[h, w], maxval)``."""
    buf = Path(path).read_bytes()
    (magic, w, h, maxval), offset = _tokens(buf, 4)
    if magic != b"P5":
        raise ValueError(f"{path}: not a binary PGM (magic {magic!r})")
    w, h, maxval = int(w), int(h), int(maxval)
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    data = np.frombuffer(buf, dtype=dtype, count=w * h, offset=offset)
    return data.reshape(h, w).astype(np.uint16 if maxval > 255 else np.uint8), maxval


def write_pgm(path, data, maxval: int = 65535) -> None:
    data = np.asarray(data)
    if data.ndim != 2:
        raise ValueError("PGM data must be 2-D")
    if data.size and (data.min() < 0 or data.max() > maxval):
        raise ValueError(f"PGM values must lie in [0, {maxval}]")
    dtype = ">u2" if maxval > 255 else "u1"
    header = f"P5\n{data.shape[1]} {data.shape[0]}\n{maxval}\n".encode("ascii")
    Path(path).write_bytes(header + np.ascontiguousarray(data.astype(dtype)).tobytes())


def read_frame_dir(directory) -> list:
    """Load source frames from ``manifest.csv`` (path,timestamp_us) or ``frame_<t_us>.pgm`` files."""
    directory = Path(directory)
    manifest = directory / "manifest.csv"
    entries = []
    if manifest.exists():
        with manifest.open(newline="") as fh:
            for row in csv.DictReader(fh):
                entries.append((directory / row["path"], int(row["timestamp_us"])))
    else:
        for p in directory.iterdir():
            m = _FRAME_RE.match(p.name)
            if m:
                entries.append((p, int(m.group(1))))
    if not entries:
        raise FileNotFoundError(f"no frames found in {directory}")
    entries.sort(key=lambda e: e[1])
    return [IntensityFrame(t, read_pgm(p)[0].astype(np.float64)) for p, t in entries]


def write_frame_dir(frames, directory) -> None:
    """Write frames as 16-bit PGMs plus ``manifest.csv``; values are rounded and clipped."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with (directory / "manifest.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path", "timestamp_us"])
        for f in frames:
            name = f"frame_{f.timestamp}.pgm"
            write_pgm(directory / name, np.clip(np.floor(f.data + 0.5), 0, 65535).astype(np.uint16))
            w.writerow([name, f.timestamp])


def read_image_sequence(directory) -> tuple:
    """Load an evaluation sequence; returns ``(list of arrays, maxval)``.

    Uses ``cis_index.csv`` or ``events_index.csv`` when present, otherwise
    the source-frame layout of :func:`read_frame_dir`.
    """
    directory = Path(directory)
    for index in ("cis_index.csv", "events_index.csv"):
        if (directory / index).exists():
            with (directory / index).open(newline="") as fh:
                rows = sorted(csv.DictReader(fh), key=lambda r: int(r["frame"]))
            paths = [directory / r["path"] for r in rows]
            break
    else:
        if (directory / "manifest.csv").exists():
            with (directory / "manifest.csv").open(newline="") as fh:
                rows = sorted(csv.DictReader(fh), key=lambda r: int(r["timestamp_us"]))
            paths = [directory / r["path"] for r in rows]
        else:
            found = sorted(
                (int(m.group(1)), p) for p in directory.iterdir() if (m := _FRAME_RE.match(p.name))
            )
            paths = [p for _, p in found]
    if not paths:
        raise FileNotFoundError(f"no frames found in {directory}")
    images, maxval = [], None
    for p in paths:
        img, mv = read_pgm(p)
        maxval = mv if maxval is None else maxval
        images.append(img.astype(np.float64))
    return images, maxval


def write_cis_frames(frames, directory) -> None:
    """Write CIS frames (maxval 1023, values as-is) and ``cis_index.csv``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with (directory / "cis_index.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame", "timestamp_us", "path"])
        for i, f in enumerate(frames):
            name = f"cis_{i:06d}.pgm"
            write_pgm(directory / name, f.data, maxval=1023)
            w.writerow([i, f.timestamp, name])


def read_cis_frames(directory) -> list:
    directory = Path(directory)
    with (directory / "cis_index.csv").open(newline="") as fh:
        rows = sorted(csv.DictReader(fh), key=lambda r: int(r["frame"]))
    return [CisFrame(int(r["timestamp_us"]), read_pgm(directory / r["path"])[0]) for r in rows]


def write_events_csv(events, path) -> None:
    events = np.asarray(events, dtype=EVENT_DTYPE)
    with Path(path).open("w", newline="") as fh:
        fh.write("t_us,x,y,p\n")
        rows = np.column_stack([events["t"], events["x"], events["y"], events["p"]]).astype(np.int64)
        for start in range(0, len(rows), _CSV_CHUNK):
            chunk = rows[start:start + _CSV_CHUNK]
            # one big format call is ~10x faster than np.savetxt's per-row loop
            fh.write(("%d,%d,%d,%d\n" * len(chunk)) % tuple(chunk.ravel().tolist()))


def read_events_csv(path) -> np.ndarray:
    with Path(path).open(newline="") as fh:
        header = fh.readline().strip()
        if header != "t_us,x,y,p":
            raise ValueError(f"{path}: unexpected event CSV header {header!r}")
        body = fh.read()
    try:
        rows = np.array(body.replace(",", " ").split(), dtype=np.int64).reshape(-1, 4)
    except ValueError as exc:
        raise ValueError(f"{path}: malformed event rows ({exc})") from None
    out = np.empty(len(rows), dtype=EVENT_DTYPE)
    if len(rows):
        out["t"], out["x"], out["y"], out["p"] = rows.T
    return out


def write_event_frames(frames, directory) -> None:
    """8-bit PGMs (none=128, +1=255, -1=0) plus ``events_index.csv``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lut = np.array([EVENT_FRAME_GRAY[-1], EVENT_FRAME_GRAY[0], EVENT_FRAME_GRAY[1]], dtype=np.uint8)
    with (directory / "events_index.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame", "timestamp_us", "path"])
        for i, f in enumerate(frames):
            name = f"ef_{i:06d}.pgm"
            write_pgm(directory / name, lut[f.data.astype(np.int64) + 1], maxval=255)
            w.writerow([i, f.timestamp, name])


def read_event_frames(directory) -> list:
    directory = Path(directory)
    decode = np.zeros(256, dtype=np.int8)
    decode[255], decode[0] = 1, -1
    with (directory / "events_index.csv").open(newline="") as fh:
        rows = sorted(csv.DictReader(fh), key=lambda r: int(r["frame"]))
    return [EventFrame(int(r["timestamp_us"]), decode[read_pgm(directory / r["path"])[0]]) for r in rows]


def write_heatmap(heatmap, stem) -> None:
    """Write ``<stem>.csv`` (exact scores), ``<stem>.pgm`` (8-bit view) and ``<stem>.txt`` (mapping)."""
    stem = Path(stem)
    data = np.asarray(heatmap.data, dtype=np.float64)
    with stem.with_suffix(".csv").open("w", newline="") as fh:
        fh.write(f"# metric={heatmap.metric} window={heatmap.window} stride={heatmap.stride}\n")
        for row in data:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    finite = data[np.isfinite(data)]
    lo = float(finite.min()) if finite.size else 0.0
    hi = float(finite.max()) if finite.size else 0.0
    span = hi - lo
    gray = np.where(np.isfinite(data), (data - lo) / span * 255.0 if span > 0 else 255.0, 255.0)
    write_pgm(stem.with_suffix(".pgm"), np.clip(np.floor(gray + 0.5), 0, 255).astype(np.uint8), maxval=255)
    stem.with_suffix(".txt").write_text(
        f"metric = {heatmap.metric}\nwindow = {heatmap.window}\nstride = {heatmap.stride}\n"
        f"gray_0 = {lo!r}\ngray_255 = {hi!r}\n"
        "mapping = linear, gray = 255 * (score - gray_0) / (gray_255 - gray_0); inf -> 255\n"
    )


def read_heatmap(stem):
    from .metrics import Heatmap

    stem = Path(stem)
    with stem.with_suffix(".csv").open() as fh:
        header = fh.readline().lstrip("# ").split()
        meta = dict(item.split("=", 1) for item in header)
        rows = [[float(v) for v in line.split(",")] for line in fh if line.strip()]
    return Heatmap(meta["metric"], np.array(rows), int(meta["window"]), int(meta["stride"]))
