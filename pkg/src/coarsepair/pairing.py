"""Coarse pairing of image frames across traversals by nearest GPS pose.

Two traversals of the same route are matched frame-by-frame: each source
frame is paired with the target frame whose recorded position is closest in
the plane, and pairs farther apart than a distance threshold are dropped.
Matching is brute force; trajectory sizes here never justify an index.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import InvalidInputError

DEFAULT_MAX_DISTANCE_M = 5.0


@dataclass(frozen=True)
class PoseLog:
    """Ordered GPS trace of one traversal.

    frame_ids are unique within the traversal; positions is an (n, 2) float
    array in meters; times is an (n,) float array in seconds.
    """

    traversal_id: str
    frame_ids: tuple[str, ...]
    positions: np.ndarray
    times: np.ndarray

    def __post_init__(self):
        positions = np.asarray(self.positions, dtype=np.float64)
        times = np.asarray(self.times, dtype=np.float64)
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "times", times)
        n = len(self.frame_ids)
        if n == 0:
            raise InvalidInputError(f"pose log {self.traversal_id!r} is empty")
        if len(set(self.frame_ids)) != n:
            raise InvalidInputError(f"duplicate frame ids in traversal {self.traversal_id!r}")
        if positions.shape != (n, 2):
            raise InvalidInputError(f"positions must be ({n}, 2), got {positions.shape}")
        if times.shape != (n,):
            raise InvalidInputError(f"times must be ({n},), got {times.shape}")
        if not np.isfinite(positions).all():
            raise InvalidInputError(f"non-finite position in traversal {self.traversal_id!r}")

    def __len__(self) -> int:
        return len(self.frame_ids)

    def index_of(self, frame_id: str) -> int:
        return self.frame_ids.index(frame_id)


class PairRecord(NamedTuple):
    source_frame: str
    target_frame: str
    gps_distance: float


@dataclass(frozen=True)
class CoarsePairManifest:
    """Set of coarsely aligned (source, target) frame pairs with GPS distances."""

    source_traversal: str
    target_traversal: str
    max_distance: float
    pairs: tuple[PairRecord, ...] = field(default_factory=tuple)

    def __post_init__(self):
        seen = set()
        for p in self.pairs:
            if p.gps_distance < 0:
                raise InvalidInputError(f"negative distance for pair {p}")
            if p.gps_distance > self.max_distance:
                raise InvalidInputError(
                    f"pair {p} exceeds max_distance {self.max_distance}"
                )
            if p.source_frame in seen:
                raise InvalidInputError(f"source frame {p.source_frame!r} paired twice")
            seen.add(p.source_frame)

    def __len__(self) -> int:
        return len(self.pairs)

    def source_frames(self) -> list[str]:
        return [p.source_frame for p in self.pairs]


def pair_traversals(
    source: PoseLog, target: PoseLog, max_distance: float = DEFAULT_MAX_DISTANCE_M
) -> CoarsePairManifest:
    """Pair each source frame with its nearest target frame by GPS position.

    Pairs farther apart than max_distance are dropped. Ties in distance are
    broken by the earliest target frame index, so the result is deterministic.
    A target frame may serve several source frames.
    """
    if max_distance <= 0:
        raise InvalidInputError(f"max_distance must be positive, got {max_distance}")
    diff = source.positions[:, None, :] - target.positions[None, :, :]
    sq = np.einsum("ijk,ijk->ij", diff, diff)
    nearest = np.argmin(sq, axis=1)  # first index wins ties
    dists = np.sqrt(sq[np.arange(len(source)), nearest])
    pairs = [
        PairRecord(source.frame_ids[i], target.frame_ids[j], float(d))
        for i, (j, d) in enumerate(zip(nearest, dists))
        if d <= max_distance
    ]
    return CoarsePairManifest(
        source_traversal=source.traversal_id,
        target_traversal=target.traversal_id,
        max_distance=float(max_distance),
        pairs=tuple(pairs),
    )


def route_arc_lengths(log: PoseLog) -> np.ndarray:
    """Cumulative arc length (meters) of each frame along the traversal."""
    steps = np.linalg.norm(np.diff(log.positions, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(steps)])


def split_by_location(
    manifest: CoarsePairManifest, source: PoseLog, boundary: float
) -> tuple[CoarsePairManifest, CoarsePairManifest]:
    """Partition pairs into (train, test) by arc length along the source route.

    A pair goes to the first split iff its source frame lies before
    boundary * total route length. The splits therefore never overlap in
    source frames or in spatial extent.
    """
    if not 0.0 < boundary < 1.0:
        raise InvalidInputError(f"boundary must be in (0, 1), got {boundary}")
    arc = route_arc_lengths(source)
    total = float(arc[-1])
    if total <= 0.0:
        raise InvalidInputError("route has zero total arc length")
    cut = boundary * total
    pos = {fid: arc[i] for i, fid in enumerate(source.frame_ids)}
    head = [p for p in manifest.pairs if pos[p.source_frame] < cut]
    tail = [p for p in manifest.pairs if pos[p.source_frame] >= cut]

    def mk(pairs):
        return CoarsePairManifest(
            source_traversal=manifest.source_traversal,
            target_traversal=manifest.target_traversal,
            max_distance=manifest.max_distance,
            pairs=tuple(pairs),
        )

    return mk(head), mk(tail)


# ---------------------------------------------------------------------------
# File formats
#
# Pose log: CSV, one record per line, header
#   traversal_id,frame_id,x_m,y_m,t_s
# Manifest: '#'-prefixed header block with traversal ids and max_distance,
# then CSV rows source_frame,target_frame,gps_distance.
# ---------------------------------------------------------------------------

POSE_FIELDS = ["traversal_id", "frame_id", "x_m", "y_m", "t_s"]


def write_pose_log(path: str | Path, log: PoseLog) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(POSE_FIELDS)
        for fid, (x, y), t in zip(log.frame_ids, log.positions, log.times):
            writer.writerow([log.traversal_id, fid, repr(float(x)), repr(float(y)), repr(float(t))])


def read_pose_log(path: str | Path) -> PoseLog:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != POSE_FIELDS:
            raise InvalidInputError(f"{path}: bad pose log header {header}")
        rows = [row for row in reader if row]
    if not rows:
        raise InvalidInputError(f"{path}: pose log has no records")
    traversals = {row[0] for row in rows}
    if len(traversals) != 1:
        raise InvalidInputError(f"{path}: mixed traversal ids {sorted(traversals)}")
    return PoseLog(
        traversal_id=rows[0][0],
        frame_ids=tuple(row[1] for row in rows),
        positions=np.array([[float(row[2]), float(row[3])] for row in rows]),
        times=np.array([float(row[4]) for row in rows]),
    )


def write_manifest(path: str | Path, manifest: CoarsePairManifest) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("# coarse-pair-manifest v1\n")
        fh.write(f"# source_traversal = {manifest.source_traversal}\n")
        fh.write(f"# target_traversal = {manifest.target_traversal}\n")
        fh.write(f"# max_distance = {manifest.max_distance!r}\n")
        writer = csv.writer(fh)
        writer.writerow(["source_frame", "target_frame", "gps_distance"])
        for p in manifest.pairs:
            writer.writerow([p.source_frame, p.target_frame, repr(p.gps_distance)])


def read_manifest(path: str | Path) -> CoarsePairManifest:
    meta: dict[str, str] = {}
    rows: list[PairRecord] = []
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != "# coarse-pair-manifest v1":
        raise InvalidInputError(f"{path}: not a coarse-pair manifest")
    body = []
    for line in lines[1:]:
        if line.startswith("#"):
            key, _, value = line[1:].partition("=")
            meta[key.strip()] = value.strip()
        elif line:
            body.append(line)
    reader = csv.reader(body)
    header = next(reader, None)
    if header != ["source_frame", "target_frame", "gps_distance"]:
        raise InvalidInputError(f"{path}: bad manifest header {header}")
    for row in reader:
        rows.append(PairRecord(row[0], row[1], float(row[2])))
    try:
        max_distance = float(meta["max_distance"])
    except (KeyError, ValueError) as exc:
        raise InvalidInputError(f"{path}: missing or bad max_distance") from exc
    return CoarsePairManifest(
        source_traversal=meta.get("source_traversal", ""),
        target_traversal=meta.get("target_traversal", ""),
        max_distance=max_distance,
        pairs=tuple(rows),
    )
