"""Readers and writers for tracks, intrinsics, templates, depths, PLY geometry and JSON reports."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Union

import numpy as np

from camera import Intrinsics
from errors import DataError, TrackError
from graph import EdgeLengths
from tracks import DepthField, Reconstruction, TrackSet

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

TRACKS_HEADER = ["view", "point", "x", "y", "visible"]
TEMPLATE_HEADER = ["i", "j", "d"]
DEPTHS_HEADER = ["view", "point", "lambda"]
INTRINSICS_KEYS = ("fx", "fy", "skew", "cx", "cy", "width", "height")


def _rows(text: str, header: List[str], source: str):
    reader = csv.reader(io.StringIO(text))
    try:
        first = next(reader)
    except StopIteration:
        raise DataError(f"{source}: empty file") from None
    if [h.strip() for h in first] != header:
        raise DataError(f"{source}:1: expected header {','.join(header)}, got {','.join(first)}")
    for line, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != len(header):
            raise DataError(f"{source}:{line}: expected {len(header)} fields, got {len(row)}")
        yield line, row


def _int(value: str, source: str, line: int, name: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise DataError(f"{source}:{line}: field '{name}' is not an integer: {value!r}") from None


def _float(value: str, source: str, line: int, name: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise DataError(f"{source}:{line}: field '{name}' is not a number: {value!r}") from None


# Tracks

def parse_tracks(text: str, source: str = "<tracks>", num_views: Optional[int] = None,
                 num_points: Optional[int] = None) -> TrackSet:
    """
    Parse a tracks CSV with header `view,point,x,y,visible`.

    Rows for invisible points may be omitted. Views and points are 0-based;
    their counts default to one past the largest index seen.
    """
    entries = []
    seen = set()
    for line, row in _rows(text, TRACKS_HEADER, source):
        view = _int(row[0], source, line, "view")
        point = _int(row[1], source, line, "point")
        x = _float(row[2], source, line, "x")
        y = _float(row[3], source, line, "y")
        visible = _int(row[4], source, line, "visible")
        if view < 0 or point < 0:
            raise DataError(f"{source}:{line}: negative index")
        if visible not in (0, 1):
            raise DataError(f"{source}:{line}: field 'visible' must be 0 or 1, got {visible}")
        if (view, point) in seen:
            raise DataError(f"{source}:{line}: duplicate entry for view {view}, point {point}")
        seen.add((view, point))
        entries.append((view, point, x, y, visible))

    if not entries:
        raise TrackError(f"{source}: no observations")
    V = num_views if num_views is not None else 1 + max(e[0] for e in entries)
    N = num_points if num_points is not None else 1 + max(e[1] for e in entries)
    pixels = np.full((V, N, 2), np.nan)
    visible = np.zeros((V, N), dtype=bool)
    for view, point, x, y, vis in entries:
        if view >= V or point >= N:
            raise DataError(f"{source}: entry (view {view}, point {point}) outside {V} views x {N} points")
        if vis:
            pixels[view, point] = (x, y)
            visible[view, point] = True
    try:
        return TrackSet(pixels, visible)
    except TrackError as exc:
        raise TrackError(f"{source}: {exc}") from None


def load_tracks(path: PathLike, **kwargs) -> TrackSet:
    return parse_tracks(Path(path).read_text(), source=str(path), **kwargs)


def save_tracks(path: PathLike, tracks: TrackSet) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(TRACKS_HEADER)
        for view in range(tracks.num_views):
            for point in range(tracks.num_points):
                if tracks.visible[view, point]:
                    x, y = tracks.pixels[view, point]
                    writer.writerow([view, point, repr(float(x)), repr(float(y)), 1])


# Intrinsics

def parse_intrinsics(data: Mapping, source: str = "<intrinsics>") -> Intrinsics:
    if not isinstance(data, Mapping):
        raise DataError(f"{source}: expected a JSON object")
    unknown = sorted(set(data) - set(INTRINSICS_KEYS))
    if unknown:
        raise DataError(f"{source}: unknown intrinsics key '{unknown[0]}'")
    missing = [key for key in ("fx", "fy", "cx", "cy", "width", "height") if key not in data]
    if missing:
        raise DataError(f"{source}: missing intrinsics key '{missing[0]}'")
    try:
        values = {key: float(data[key]) for key in data}
    except (TypeError, ValueError) as exc:
        raise DataError(f"{source}: non-numeric intrinsics value ({exc})") from None
    return Intrinsics(**values)


def load_intrinsics(path: PathLike) -> Intrinsics:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    return parse_intrinsics(data, source=str(path))


def save_intrinsics(path: PathLike, intrinsics: Intrinsics) -> None:
    write_json(path, intrinsics.to_dict())


# Template edges

def parse_template(text: str, source: str = "<template>") -> EdgeLengths:
    """Parse a template CSV `i,j,d` (undirected, each edge once)."""
    lengths: Dict = {}
    for line, row in _rows(text, TEMPLATE_HEADER, source):
        i = _int(row[0], source, line, "i")
        j = _int(row[1], source, line, "j")
        d = _float(row[2], source, line, "d")
        if i == j:
            raise DataError(f"{source}:{line}: self edge ({i}, {j})")
        if not d >= 0:
            raise DataError(f"{source}:{line}: negative or invalid length {d}")
        key = (min(i, j), max(i, j))
        if key in lengths:
            raise DataError(f"{source}:{line}: edge {key} listed twice")
        lengths[key] = d
    return EdgeLengths.from_mapping(lengths)


def load_template(path: PathLike) -> EdgeLengths:
    return parse_template(Path(path).read_text(), source=str(path))


def save_template(path: PathLike, lengths: EdgeLengths) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(TEMPLATE_HEADER)
        for (i, j), d in zip(lengths.edges, lengths.lengths):
            writer.writerow([int(i), int(j), repr(float(d))])


# Depths

def save_depths(path: PathLike, depths: DepthField) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(DEPTHS_HEADER)
        for view, point in zip(*np.nonzero(depths.visible)):
            writer.writerow([int(view), int(point), repr(float(depths.depth[view, point]))])


def parse_depths(text: str, tracks: TrackSet, intrinsics: Intrinsics,
                 source: str = "<depths>") -> DepthField:
    depth = np.full(tracks.visible.shape, np.nan)
    for line, row in _rows(text, DEPTHS_HEADER, source):
        view = _int(row[0], source, line, "view")
        point = _int(row[1], source, line, "point")
        value = _float(row[2], source, line, "lambda")
        if not (0 <= view < tracks.num_views and 0 <= point < tracks.num_points):
            raise DataError(f"{source}:{line}: (view {view}, point {point}) not in tracks")
        if not tracks.visible[view, point]:
            raise DataError(f"{source}:{line}: point {point} is not visible in view {view}")
        depth[view, point] = value
    missing = np.argwhere(tracks.visible & np.isnan(depth))
    if len(missing):
        view, point = missing[0]
        raise DataError(f"{source}: no depth for visible point {point} in view {view}")
    return DepthField.from_depths(depth, tracks, intrinsics)


def load_depths(path: PathLike, tracks: TrackSet, intrinsics: Intrinsics) -> DepthField:
    return parse_depths(Path(path).read_text(), tracks, intrinsics, source=str(path))


# PLY

def write_ply(path: PathLike, points: np.ndarray) -> None:
    """ASCII PLY with one vertex element (x y z)."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(points)}",
        "property double x",
        "property double y",
        "property double z",
        "end_header",
    ]
    lines.extend(f"{x!r} {y!r} {z!r}" for x, y, z in points.tolist())
    Path(path).write_text("\n".join(lines) + "\n")


def read_ply(path: PathLike) -> np.ndarray:
    text = Path(path).read_text().splitlines()
    if not text or text[0].strip() != "ply":
        raise DataError(f"{path}: not a PLY file")
    count = None
    for n, line in enumerate(text):
        parts = line.split()
        if parts[:2] == ["element", "vertex"]:
            count = int(parts[2])
        if line.strip() == "end_header":
            if count is None:
                raise DataError(f"{path}: no vertex element")
            body = [row.split()[:3] for row in text[n + 1:n + 1 + count]]
            if len(body) != count:
                raise DataError(f"{path}: expected {count} vertices, found {len(body)}")
            return np.array(body, dtype=float).reshape(-1, 3)
    raise DataError(f"{path}: missing end_header")


def save_reconstruction_ply(directory: PathLike, recon: Reconstruction, prefix: str = "view") -> List[Path]:
    """One PLY per view; invisible points are omitted."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for view in range(recon.tracks.num_views):
        path = directory / f"{prefix}_{view:03d}.ply"
        write_ply(path, recon.view_points(view))
        paths.append(path)
    return paths


# JSON and hashing

def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    if hasattr(obj, "to_dict"):
        return obj.to_dict()
    if hasattr(obj, "value"):
        return obj.value
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def to_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default)


def write_json(path: PathLike, obj) -> None:
    Path(path).write_text(to_json(obj) + "\n")


def read_json(path: PathLike):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None


def blob_hash(data: bytes) -> str:
    """git-style object hash: sha1 over `blob <size>\\0<data>`."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def input_hash(paths: Iterable[Optional[PathLike]]) -> Dict[str, str]:
    """Per-file blob hashes plus a combined `inputs` hash over all of them."""
    hashes = {}
    for path in paths:
        if path is None:
            continue
        hashes[str(path)] = blob_hash(Path(path).read_bytes())
    combined = "\n".join(f"{h} {name}" for name, h in sorted(hashes.items()))
    hashes["inputs"] = blob_hash(combined.encode("utf-8"))
    return hashes


def array_hash(*arrays: np.ndarray) -> str:
    """Content hash of in-memory arrays (used by checkpoint manifests)."""
    digest = hashlib.sha1()
    for array in arrays:
        array = np.ascontiguousarray(array)
        digest.update(str(array.dtype).encode() + str(array.shape).encode())
        digest.update(np.nan_to_num(array, nan=-1.2345e300).tobytes())
    return digest.hexdigest()
