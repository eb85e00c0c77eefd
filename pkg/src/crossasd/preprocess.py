"""Proxy speaker-homogeneous segments from voice-activity regions.

Voiced regions are cut at shot boundaries and then chopped into pieces no longer
than a fixed cap (1 s by default). Only interval arithmetic happens here; speaker
embeddings have to be attached by the caller.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, List, Sequence

import numpy as np

from .core import TimeInterval, _read_jsonl, write_jsonl
from .errors import InvalidParameter, ParseError, ValidationError

DEFAULT_MAX_DURATION = 1.0


def _check_regions(regions: Sequence[TimeInterval]) -> None:
    for prev, cur in zip(regions, regions[1:]):
        if cur.start < prev.end:
            raise ValidationError(
                f"VAD regions must be sorted and non-overlapping: [{prev.start}, {prev.end}] "
                f"then [{cur.start}, {cur.end}]")


def _check_boundaries(boundaries: Sequence[float]) -> None:
    b = np.asarray(boundaries, dtype=float)
    if b.size and (np.any(b < 0) or np.any(np.diff(b) <= 0) or not np.all(np.isfinite(b))):
        raise ValidationError("shot boundaries must be finite, non-negative and strictly increasing")


def split_by_boundaries(regions: Sequence[TimeInterval], boundaries: Sequence[float]) -> List[TimeInterval]:
    """Cut each region at every boundary strictly inside it."""
    regions = list(regions)
    _check_regions(regions)
    _check_boundaries(boundaries)
    b = np.asarray(boundaries, dtype=float)
    out = []
    for reg in regions:
        lo = np.searchsorted(b, reg.start, side="right")
        hi = np.searchsorted(b, reg.end, side="left")
        cuts = [reg.start] + [float(t) for t in b[lo:hi]] + [reg.end]
        out.extend(TimeInterval(a, z) for a, z in zip(cuts, cuts[1:]))
    return out


def split_max_duration(intervals: Iterable[TimeInterval], max_dur: float = DEFAULT_MAX_DURATION,
                       min_duration: float = 0.0) -> List[TimeInterval]:
    """Chop intervals into consecutive ``max_dur`` chunks, the shorter remainder last.

    Pieces shorter than ``min_duration`` are dropped afterwards (default keeps all).
    """
    if not max_dur > 0:
        raise InvalidParameter(f"max_dur must be > 0, got {max_dur}")
    if min_duration < 0:
        raise InvalidParameter(f"min_duration must be >= 0, got {min_duration}")
    out = []
    for iv in intervals:
        n_full = int(np.floor(iv.duration / max_dur))
        # float division can land a hair below an integer; 1e-12 s slack keeps [0, 3.0]/3.0 whole
        if iv.duration - n_full * max_dur <= 1e-12 and n_full > 0:
            n_full -= 1
        cuts = [iv.start + j * max_dur for j in range(n_full + 1)] + [iv.end]
        for a, z in zip(cuts, cuts[1:]):
            if z > a and z - a >= min_duration:
                out.append(TimeInterval(a, z))
    return out


def proxy_segments(regions: Sequence[TimeInterval], boundaries: Sequence[float],
                   max_dur: float = DEFAULT_MAX_DURATION, min_duration: float = 0.0) -> List[TimeInterval]:
    return split_max_duration(split_by_boundaries(regions, boundaries), max_dur, min_duration)


def load_vad(path) -> List[TimeInterval]:
    out = []
    for lineno, rec in _read_jsonl(path):
        if "start" not in rec or "end" not in rec:
            raise ParseError("missing field(s): start/end", path, lineno)
        try:
            out.append(TimeInterval(float(rec["start"]), float(rec["end"])))
        except (TypeError, ValueError) as exc:
            raise ParseError(str(exc), path, lineno) from None
    out.sort(key=lambda iv: (iv.start, iv.end))
    _check_regions(out)
    return out


def load_shots(path) -> List[float]:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ParseError(f"cannot read file: {exc.strerror}", path) from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", path, exc.lineno) from None
    if not isinstance(data, dict) or not isinstance(data.get("boundaries"), list):
        raise ParseError('expected {"boundaries": [...]}', path)
    try:
        times = [float(t) for t in data["boundaries"]]
    except (TypeError, ValueError):
        raise ParseError("boundaries must be numbers", path) from None
    _check_boundaries(times)
    return times


def save_proxy_segments(path, intervals: Sequence[TimeInterval], prefix: str = "seg") -> None:
    width = max(5, len(str(len(intervals))))
    write_jsonl(path, ({"id": f"{prefix}{i:0{width}d}", "start": iv.start, "end": iv.end}
                       for i, iv in enumerate(intervals)))
