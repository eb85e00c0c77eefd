"""Domain types, JSON-Lines ingestion and the segment -> candidate-track map."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import ParseError, ValidationError

#: Sentinel for "speaker not visible"; serialized as JSON ``null``.
OFF_SCREEN = None


@dataclass(frozen=True)
class TimeInterval:
    start: float
    end: float

    def __post_init__(self):
        if not (math.isfinite(self.start) and math.isfinite(self.end)):
            raise ValidationError(f"non-finite interval [{self.start}, {self.end}]")
        if self.start < 0 or not self.start < self.end:
            raise ValidationError(f"invalid interval [{self.start}, {self.end}]: need 0 <= start < end")

    @property
    def duration(self) -> float:
        return self.end - self.start

    def overlap(self, other: "TimeInterval") -> float:
        """Length of the intersection, 0.0 when the intervals are disjoint or touch."""
        return max(0.0, min(self.end, other.end) - max(self.start, other.start))


def _as_embedding(values, item_id) -> np.ndarray:
    try:
        arr = np.asarray(values, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"embedding is not numeric: {exc}", item_id) from None
    if arr.ndim != 1 or arr.size == 0:
        raise ValidationError("embedding must be a non-empty flat list", item_id)
    if not np.all(np.isfinite(arr)):
        raise ValidationError("embedding contains non-finite values", item_id)
    if not np.linalg.norm(arr) > 0:
        raise ValidationError("embedding has zero norm", item_id)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class SpeechSegment:
    id: str
    interval: TimeInterval
    embedding: Optional[np.ndarray]
    video: str = ""

    @property
    def start(self) -> float:
        return self.interval.start

    @property
    def end(self) -> float:
        return self.interval.end

    def __eq__(self, other):
        if not isinstance(other, SpeechSegment):
            return NotImplemented
        return (self.id == other.id and self.interval == other.interval and self.video == other.video
                and _same_array(self.embedding, other.embedding))


@dataclass(frozen=True, eq=False)
class FaceTrack:
    id: str
    interval: TimeInterval
    embedding: np.ndarray
    frame_count: Optional[int] = None

    @property
    def start(self) -> float:
        return self.interval.start

    @property
    def end(self) -> float:
        return self.interval.end

    def __eq__(self, other):
        if not isinstance(other, FaceTrack):
            return NotImplemented
        return (self.id == other.id and self.interval == other.interval
                and self.frame_count == other.frame_count
                and _same_array(self.embedding, other.embedding))


def _same_array(a, b) -> bool:
    if a is None or b is None:
        return a is None and b is None
    return a.shape == b.shape and bool(np.array_equal(a, b))


@dataclass(frozen=True)
class CandidateMap:
    """Candidate tracks per kept segment; ``purged`` holds segments with no overlapping track."""

    entries: Mapping[str, tuple]
    purged: tuple = ()

    def __getitem__(self, segment_id):
        return self.entries[segment_id]

    def __contains__(self, segment_id):
        return segment_id in self.entries

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def segment_ids(self) -> list:
        return list(self.entries)


# ground truth is a plain mapping: segment id -> track id, or OFF_SCREEN (None)
GroundTruth = Mapping[str, Optional[str]]


def make_segment(id, start, end, embedding=None, video="") -> SpeechSegment:
    id = str(id)
    try:
        interval = TimeInterval(float(start), float(end))
    except ValidationError as exc:
        raise ValidationError(str(exc), id) from None
    emb = None if embedding is None else _as_embedding(embedding, id)
    return SpeechSegment(id, interval, emb, str(video))


def make_track(id, start, end, embedding=None, frames=None, frame_count=None) -> FaceTrack:
    """Build a FaceTrack; per-frame embeddings, when given, are averaged into the track embedding."""
    id = str(id)
    try:
        interval = TimeInterval(float(start), float(end))
    except ValidationError as exc:
        raise ValidationError(str(exc), id) from None
    if frames is not None:
        try:
            fr = np.asarray(frames, dtype=np.float64)
        except (TypeError, ValueError):
            raise ValidationError("frames must be a list of equal-length numeric lists", id) from None
        if fr.ndim != 2 or fr.shape[0] == 0 or fr.shape[1] == 0:
            raise ValidationError("frames must be a non-empty list of equal-length lists", id)
        if not np.all(np.isfinite(fr)):
            raise ValidationError("frames contain non-finite values", id)
        mean = fr.mean(axis=0)
        if embedding is not None and not np.allclose(np.asarray(embedding, dtype=np.float64), mean,
                                                     rtol=1e-9, atol=1e-12):
            raise ValidationError("embedding disagrees with the mean of frames", id)
        embedding = mean
        if frame_count is None:
            frame_count = fr.shape[0]
    if embedding is None:
        raise ValidationError("track needs 'embedding' or 'frames'", id)
    if frame_count is not None:
        if isinstance(frame_count, bool) or int(frame_count) != frame_count or frame_count < 1:
            raise ValidationError(f"frame_count must be a positive integer, got {frame_count!r}", id)
        frame_count = int(frame_count)
    return FaceTrack(id, interval, _as_embedding(embedding, id), frame_count)


def _read_jsonl(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read file: {exc.strerror}", path) from None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", path, lineno) from None
        if not isinstance(rec, dict):
            raise ParseError("record is not a JSON object", path, lineno)
        yield lineno, rec


def _require(rec, keys, path, lineno):
    missing = [k for k in keys if k not in rec]
    if missing:
        raise ParseError(f"missing field(s): {', '.join(missing)}", path, lineno)


def _check_collection(items, what):
    seen = set()
    dim = None
    for it in items:
        if it.id in seen:
            raise ValidationError(f"duplicate {what} id", it.id)
        seen.add(it.id)
        if it.embedding is None:
            continue
        if dim is None:
            dim = it.embedding.shape[0]
        elif it.embedding.shape[0] != dim:
            raise ValidationError(
                f"inconsistent embedding dimension: {it.embedding.shape[0]} != {dim}", it.id)


def _sort_key(item):
    return (item.interval.start, item.interval.end, item.id)


def validate_segments(segments: Iterable[SpeechSegment], require_embedding=True) -> list:
    segs = sorted(segments, key=_sort_key)
    if require_embedding:
        for s in segs:
            if s.embedding is None:
                raise ValidationError("segment has no embedding", s.id)
    _check_collection(segs, "segment")
    return segs


def validate_tracks(tracks: Iterable[FaceTrack]) -> list:
    trs = sorted(tracks, key=_sort_key)
    _check_collection(trs, "track")
    return trs


def load_segments(path, require_embedding=True) -> list:
    """Read ``segments.jsonl``; returns segments sorted by start time."""
    out = []
    for lineno, rec in _read_jsonl(path):
        _require(rec, ("id", "start", "end") + (("embedding",) if require_embedding else ()), path, lineno)
        try:
            out.append(make_segment(rec["id"], rec["start"], rec["end"], rec.get("embedding"),
                                    rec.get("video", "")))
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ParseError(f"bad field value: {exc}", path, lineno) from None
    return validate_segments(out, require_embedding)


def load_tracks(path) -> list:
    """Read ``tracks.jsonl``; ``frames`` (per-frame embeddings) may replace ``embedding``."""
    out = []
    for lineno, rec in _read_jsonl(path):
        _require(rec, ("id", "start", "end"), path, lineno)
        if "embedding" not in rec and "frames" not in rec:
            raise ParseError("missing field(s): embedding", path, lineno)
        try:
            out.append(make_track(rec["id"], rec["start"], rec["end"], rec.get("embedding"),
                                  rec.get("frames"), rec.get("frame_count")))
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ParseError(f"bad field value: {exc}", path, lineno) from None
    return validate_tracks(out)


def _load_pairs(path, what):
    out = {}
    for lineno, rec in _read_jsonl(path):
        _require(rec, ("segment_id", "track_id"), path, lineno)
        sid, tid = rec["segment_id"], rec["track_id"]
        if not isinstance(sid, str) or not (tid is None or isinstance(tid, str)):
            raise ParseError("segment_id must be a string and track_id a string or null", path, lineno)
        if sid in out:
            raise ValidationError(f"duplicate {what} entry", sid)
        out[sid] = tid
    return out


def load_ground_truth(path, tracks: Optional[Iterable[FaceTrack]] = None) -> dict:
    gt = _load_pairs(path, "ground-truth")
    if tracks is not None:
        known = {t.id for t in tracks}
        for sid, tid in gt.items():
            if tid is not None and tid not in known:
                raise ValidationError(f"ground truth references unknown track {tid!r}", sid)
    return gt


def load_pins(path) -> dict:
    pins = _load_pairs(path, "pin")
    for sid, tid in pins.items():
        if tid is None:
            raise ValidationError("a pin must name a track", sid)
    return pins


def _num(x):
    # json cannot hold numpy scalars; repr of a python float round-trips exactly
    return float(x)


def segment_record(seg: SpeechSegment) -> dict:
    rec = {"id": seg.id, "start": _num(seg.start), "end": _num(seg.end)}
    if seg.embedding is not None:
        rec["embedding"] = [float(v) for v in seg.embedding]
    if seg.video:
        rec["video"] = seg.video
    return rec


def track_record(tr: FaceTrack) -> dict:
    rec = {"id": tr.id, "start": _num(tr.start), "end": _num(tr.end),
           "embedding": [float(v) for v in tr.embedding]}
    if tr.frame_count is not None:
        rec["frame_count"] = tr.frame_count
    return rec


def write_jsonl(path, records: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=False, allow_nan=False))
            fh.write("\n")


def save_segments(path, segments: Sequence[SpeechSegment]) -> None:
    write_jsonl(path, (segment_record(s) for s in segments))


def save_tracks(path, tracks: Sequence[FaceTrack]) -> None:
    write_jsonl(path, (track_record(t) for t in tracks))


def save_pairs(path, pairs: Mapping[str, Optional[str]]) -> None:
    write_jsonl(path, ({"segment_id": s, "track_id": t} for s, t in pairs.items()))


def build_candidate_map(segments: Sequence[SpeechSegment], tracks: Sequence[FaceTrack],
                        min_overlap: float = 0.0) -> CandidateMap:
    """Collect, for every segment, the tracks overlapping it by more than ``min_overlap`` seconds.

    Touching endpoints never qualify. Candidate lists are sorted by track id; segments
    without any candidate go to ``purged``.
    """
    if not min_overlap >= 0:
        raise ValidationError(f"min_overlap must be >= 0, got {min_overlap}")
    by_start = sorted(tracks, key=_sort_key)
    starts = np.array([t.start for t in by_start])
    entries = {}
    purged = []
    for seg in segments:
        # only tracks starting before the segment ends can overlap it
        hi = int(np.searchsorted(starts, seg.end, side="left"))
        cands = sorted(t.id for t in by_start[:hi]
                       if seg.interval.overlap(t.interval) > min_overlap)
        if cands:
            entries[seg.id] = tuple(cands)
        else:
            purged.append(seg.id)
    return CandidateMap(entries, tuple(purged))
