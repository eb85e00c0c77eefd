"""Stage 1: coordinate-ascent speech-face assignment.

Each speech segment starts with a random overlapping face track. Segments are then
revisited in temporal order and reassigned to whichever candidate maximizes the
mean row correlation between the speech and face distance matrices, until an epoch
stops improving it. Long videos are cut into contiguous partitions of at most
``partition_size`` segments that are optimized independently.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from . import kernels
from .core import OFF_SCREEN, CandidateMap, FaceTrack, SpeechSegment
from .errors import CacheInconsistency, InvalidParameter, PinConflict, ValidationError
from .identity import (DIAGONAL_POLICIES, INCLUDE, DistanceMatrix, build_distance_matrix,
                       centered_rows, corr_objective, unit_rows)

log = logging.getLogger(__name__)

DEFAULT_PARTITION_SIZE = 500
# single starts get trapped in local optima roughly a third of the time on clean data
DEFAULT_RESTARTS = 10
MIN_PARTITION = 3


@dataclass(frozen=True)
class SolverConfig:
    partition_size: int = DEFAULT_PARTITION_SIZE
    max_epochs: int = 50
    convergence_eps: float = 1e-9
    tie_eps: float = 1e-12
    seed: int = 0
    diagonal_policy: str = INCLUDE
    restarts: int = DEFAULT_RESTARTS
    workers: int = 1

    def __post_init__(self):
        if int(self.partition_size) != self.partition_size or self.partition_size < MIN_PARTITION:
            raise InvalidParameter(f"partition_size must be an integer >= {MIN_PARTITION}")
        if int(self.max_epochs) != self.max_epochs or self.max_epochs < 1:
            raise InvalidParameter("max_epochs must be a positive integer")
        if self.restarts < 1 or self.workers < 1:
            raise InvalidParameter("restarts and workers must be >= 1")
        if self.convergence_eps < 0 or self.tie_eps < 0:
            raise InvalidParameter("tolerances must be >= 0")
        if self.diagonal_policy not in DIAGONAL_POLICIES:
            raise InvalidParameter(f"diagonal_policy must be one of {DIAGONAL_POLICIES}")


@dataclass(frozen=True)
class AssignmentState:
    """Chosen track (or OFF_SCREEN) per segment, with the objective it reaches."""

    choice: Mapping[str, Optional[str]]
    objective: float = math.nan
    epoch_history: tuple = ()
    converged: bool = True

    def __getitem__(self, segment_id):
        return self.choice[segment_id]


# -------------------------------------------------------------- partitioning

def partition_segments(segment_ids: Sequence[str], partition_size: int = DEFAULT_PARTITION_SIZE) -> List[list]:
    """Contiguous chunks of ``partition_size``; a tail shorter than 3 joins the previous chunk."""
    if int(partition_size) != partition_size or partition_size < MIN_PARTITION:
        raise InvalidParameter(f"partition size must be an integer >= {MIN_PARTITION}, got {partition_size}")
    ids = list(segment_ids)
    parts = [ids[i:i + partition_size] for i in range(0, len(ids), partition_size)]
    if len(parts) > 1 and len(parts[-1]) < MIN_PARTITION:
        tail = parts.pop()
        parts[-1] = parts[-1] + tail
    return parts


# ---------------------------------------------------------------- init, pins

def check_pins(candidates: CandidateMap, pins: Optional[Mapping[str, str]]) -> dict:
    pins = dict(pins or {})
    for sid, tid in pins.items():
        if sid not in candidates:
            raise PinConflict(f"pinned segment {sid!r} has no candidate tracks")
        if tid not in candidates[sid]:
            raise PinConflict(f"pin {sid!r} -> {tid!r} is not among the segment's candidates")
    return pins


def random_init(candidates: CandidateMap, pins: Optional[Mapping[str, str]] = None, seed=0) -> AssignmentState:
    """Uniformly random candidate per segment (pins honored), reproducible per seed."""
    pins = check_pins(candidates, pins)
    rng = np.random.default_rng(seed)
    choice = {}
    for sid, cands in candidates.entries.items():
        # always draw so that adding a pin does not shift other segments' draws
        pick = cands[int(rng.integers(len(cands)))]
        choice[sid] = pins.get(sid, pick)
    return AssignmentState(choice)


def pins_from_ground_truth(ground_truth: Mapping[str, Optional[str]], speaker_of: Mapping[str, object],
                           fraction: float = 0.15, seed=0) -> dict:
    """Pin a random ``fraction`` of each speaker's on-screen segments to their true track."""
    if not 0 <= fraction <= 1:
        raise InvalidParameter("fraction must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    by_speaker: Dict[object, list] = {}
    for sid, tid in ground_truth.items():
        if tid is not OFF_SCREEN:
            by_speaker.setdefault(speaker_of[sid], []).append(sid)
    pins = {}
    for spk in sorted(by_speaker, key=str):
        sids = sorted(by_speaker[spk])
        k = int(round(fraction * len(sids)))
        for j in sorted(rng.choice(len(sids), size=k, replace=False)):
            pins[sids[j]] = ground_truth[sids[j]]
    return pins


# -------------------------------------------------------------------- cache

class ObjectiveCache:
    """Incrementally maintained row statistics of FD against a fixed SD.

    Replacing the face of segment ``i`` touches row and column ``i`` of FD, i.e.
    one entry in every other row plus all of row ``i``; the cache updates the
    per-row sums in O(N) instead of recomputing the O(N^2) objective.
    """

    def __init__(self, sd, fd, diagonal: str = INCLUDE, assigned_units=None, debug: bool = False):
        self.sd = np.ascontiguousarray(sd.values if isinstance(sd, DistanceMatrix) else sd, dtype=np.float64)
        self.order = sd.order if isinstance(sd, DistanceMatrix) else None
        self.diagonal = diagonal
        self.sdc, self.sx2, self.n = centered_rows(self.sd, diagonal)
        self.fd = np.array(fd.values if isinstance(fd, DistanceMatrix) else fd, dtype=np.float64)
        if self.fd.shape != self.sd.shape:
            raise ValidationError(f"FD shape {self.fd.shape} does not match SD shape {self.sd.shape}")
        np.fill_diagonal(self.fd, 0.0)
        self.units = None if assigned_units is None else np.array(assigned_units, dtype=np.float64)
        self.debug = debug
        self.refresh()

    @classmethod
    def from_embeddings(cls, sd, face_embeddings, diagonal: str = INCLUDE, debug: bool = False):
        units = unit_rows(face_embeddings)
        fd = kernels.cosine_distance_matrix(units)
        return cls(sd, fd, diagonal, assigned_units=units, debug=debug)

    def refresh(self) -> None:
        self.sy, self.syy, self.sxy = kernels.row_stats(self.sdc, self.fd)

    @property
    def objective(self) -> float:
        return float(kernels.objective(self.sxy, self.sx2, self.sy, self.syy, self.n))

    def row_scores(self) -> np.ndarray:
        return kernels._corr_np(self.sxy, self.sx2, self.sy, self.syy, self.n)

    def full_objective(self) -> float:
        return corr_objective(self.sd, self.fd, self.diagonal)

    def column_for(self, i: int, embedding) -> np.ndarray:
        if self.units is None:
            raise CacheInconsistency("cache was built without face embeddings")
        u = np.asarray(embedding, dtype=np.float64)
        u = u / np.linalg.norm(u)
        col = np.clip(1.0 - self.units @ u, 0.0, 2.0)
        col[i] = 0.0
        return col

    def score_column(self, i: int, col) -> float:
        col = np.asarray(col, dtype=np.float64)
        return float(kernels.column_objective(i, col, self.fd, self.sdc, self.sx2, self.sy, self.syy,
                                              self.sxy, self.n))

    def apply_column(self, i: int, col) -> float:
        col = np.array(col, dtype=np.float64)
        col[i] = 0.0
        kernels.apply_column(i, col, self.fd, self.sdc, self.sy, self.syy, self.sxy)
        if self.debug:
            self.check()
        return self.objective

    def check(self, tol: float = 1e-9) -> None:
        full = self.full_objective()
        if not abs(full - self.objective) <= tol:
            raise CacheInconsistency(f"cached objective {self.objective!r} != recomputed {full!r}")


def apply_reassignment(cache: ObjectiveCache, i: int, new_track_embedding) -> float:
    """Swap the face of segment ``i`` for ``new_track_embedding``; returns the new objective."""
    col = cache.column_for(i, new_track_embedding)
    obj = cache.apply_column(i, col)
    u = np.asarray(new_track_embedding, dtype=np.float64)
    cache.units[i] = u / np.linalg.norm(u)
    return obj


# ------------------------------------------------------------------ problem

def _track_lookup(tracks) -> dict:
    if isinstance(tracks, Mapping):
        return {str(k): np.asarray(getattr(v, "embedding", v), dtype=np.float64) for k, v in tracks.items()}
    return {t.id: t.embedding for t in tracks}


class PartitionProblem:
    """Index-based view of one partition: SD, candidate lists and track distances."""

    def __init__(self, sd: DistanceMatrix, candidates: CandidateMap, track_embeddings: Mapping,
                 pins: Optional[Mapping[str, str]] = None):
        self.sd = sd
        self.segment_ids = list(sd.order)
        pins = check_pins(candidates, {k: v for k, v in (pins or {}).items() if k in set(self.segment_ids)})
        track_ids = sorted({t for sid in self.segment_ids for t in candidates[sid]})
        self.track_ids = track_ids
        self.track_index = {t: j for j, t in enumerate(track_ids)}
        self.units = unit_rows(np.stack([np.asarray(track_embeddings[t], dtype=np.float64) for t in track_ids]))
        self.tdist = np.ascontiguousarray(kernels.cosine_distance_matrix(self.units))
        ptr = [0]
        idx = []
        for sid in self.segment_ids:
            idx.extend(self.track_index[t] for t in candidates[sid])
            ptr.append(len(idx))
        self.cand_ptr = np.asarray(ptr, dtype=np.int64)
        self.cand_idx = np.asarray(idx, dtype=np.int64)
        self.pinned = np.array([sid in pins for sid in self.segment_ids], dtype=np.bool_)
        self.pins = pins

    def encode(self, choice: Mapping[str, str]) -> np.ndarray:
        return np.array([self.track_index[choice[sid]] for sid in self.segment_ids], dtype=np.int64)

    def decode(self, assign) -> dict:
        return {sid: self.track_ids[int(a)] for sid, a in zip(self.segment_ids, assign)}

    def fd_for(self, assign) -> np.ndarray:
        fd = self.tdist[np.ix_(assign, assign)].copy()
        np.fill_diagonal(fd, 0.0)
        return fd

    def cache_for(self, assign, diagonal=INCLUDE) -> ObjectiveCache:
        return ObjectiveCache(self.sd, self.fd_for(assign), diagonal, assigned_units=self.units[assign])


def optimize_assignment(problem: PartitionProblem, assign, config: SolverConfig):
    """Run epochs until no move, a gain below ``convergence_eps``, or ``max_epochs``.

    Returns ``(assign, cache, history, converged)``; ``assign`` is a new array.
    """
    assign = np.array(assign, dtype=np.int64)
    for i in np.flatnonzero(problem.pinned):
        assign[i] = problem.track_index[problem.pins[problem.segment_ids[i]]]
    cache = problem.cache_for(assign, config.diagonal_policy)
    order = np.arange(len(problem.segment_ids), dtype=np.int64)
    obj = cache.objective
    history = [obj]
    converged = False
    for _ in range(config.max_epochs):
        moves = kernels.sweep(order, problem.pinned, problem.cand_ptr, problem.cand_idx, problem.tdist,
                              assign, cache.fd, cache.sdc, cache.sx2, cache.sy, cache.syy, cache.sxy,
                              cache.n, config.tie_eps)
        if moves == 0:
            history.append(obj)
            converged = True
            break
        # recompute the row sums from FD to drop accumulated rounding
        cache.refresh()
        new = cache.objective
        history.append(new)
        gain = new - obj
        obj = new
        if gain < config.convergence_eps:
            converged = True
            break
    cache.units = problem.units[assign]
    return assign, cache, history, converged


def stage1_optimize(SD: DistanceMatrix, candidates: CandidateMap, track_embeddings, init: AssignmentState,
                    pins: Optional[Mapping[str, str]] = None, config: SolverConfig = SolverConfig()) -> AssignmentState:
    """Coordinate ascent on one partition whose segments (in temporal order) are ``SD.order``."""
    problem = PartitionProblem(SD, candidates, _track_lookup(track_embeddings), pins)
    for sid in problem.segment_ids:
        if init.choice.get(sid) not in candidates[sid]:
            raise ValidationError("initial choice is not a candidate track", sid)
    assign, cache, history, converged = optimize_assignment(problem, problem.encode(init.choice), config)
    return AssignmentState(problem.decode(assign), history[-1], tuple(history), converged)


# ------------------------------------------------------------------- driver

@dataclass
class PartitionResult:
    segment_ids: list
    sd: DistanceMatrix
    fd: DistanceMatrix
    choice: dict
    objective: float
    epoch_history: list
    converged: bool
    restart_objectives: list
    best_restart: int
    scores: np.ndarray


@dataclass
class SolveResult:
    state: AssignmentState
    partitions: List[PartitionResult]
    init: AssignmentState
    purged: tuple = ()
    backend: str = kernels.BACKEND

    @property
    def scores(self) -> dict:
        out = {}
        for p in self.partitions:
            out.update(zip(p.segment_ids, (float(s) for s in p.scores)))
        return out


def restart_seeds(seed, restarts: int) -> list:
    """Seed for restart 0 is ``seed`` itself; later restarts use spawned child seeds."""
    children = np.random.SeedSequence(seed).spawn(max(restarts - 1, 0))
    return [seed] + [int(c.generate_state(1)[0]) for c in children]


def _solve_partition(segment_ids, embeddings, candidates, track_embeddings, pins, inits, config):
    sd = build_distance_matrix(embeddings, segment_ids)
    problem = PartitionProblem(sd, candidates, track_embeddings, pins)
    best = None
    objectives = []
    for r, init in enumerate(inits):
        assign, cache, history, converged = optimize_assignment(problem, problem.encode(init), config)
        objectives.append(history[-1])
        # strict improvement only: earlier restarts win ties
        if best is None or history[-1] > best[2][-1] + config.tie_eps:
            best = (assign, cache, history, converged, r)
    assign, cache, history, converged, r = best
    return PartitionResult(
        segment_ids=list(segment_ids), sd=sd, fd=DistanceMatrix(cache.fd.copy(), sd.order),
        choice=problem.decode(assign), objective=float(history[-1]), epoch_history=list(history),
        converged=converged, restart_objectives=objectives, best_restart=r, scores=cache.row_scores())


def solve(segments: Sequence[SpeechSegment], tracks: Sequence[FaceTrack], candidates: CandidateMap,
          config: SolverConfig = SolverConfig(), pins: Optional[Mapping[str, str]] = None) -> SolveResult:
    """Stage 1 over a whole video: partition, random restarts, coordinate ascent."""
    pins = check_pins(candidates, pins)
    seg_by_id = {s.id: s for s in segments}
    kept = [s.id for s in sorted(segments, key=lambda s: (s.start, s.end, s.id)) if s.id in candidates]
    if len(kept) < MIN_PARTITION:
        raise ValidationError(f"need at least {MIN_PARTITION} segments with candidate tracks, got {len(kept)}")
    track_emb = _track_lookup(tracks)
    seeds = restart_seeds(config.seed, config.restarts)
    inits = [random_init(candidates, pins, s) for s in seeds]
    parts = partition_segments(kept, config.partition_size)

    def run(ids):
        emb = np.stack([seg_by_id[s].embedding for s in ids])
        return _solve_partition(ids, emb, candidates, track_emb, pins, [i.choice for i in inits], config)

    if config.workers > 1 and len(parts) > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(run, parts))
    else:
        results = [run(p) for p in parts]

    choice = {}
    for p in results:
        choice.update(p.choice)
    sizes = np.array([len(p.segment_ids) for p in results], dtype=float)
    n_ep = max(len(p.epoch_history) for p in results)
    padded = np.array([p.epoch_history + [p.epoch_history[-1]] * (n_ep - len(p.epoch_history)) for p in results])
    history = tuple(float(v) for v in sizes @ padded / sizes.sum())
    state = AssignmentState(choice, history[-1], history, all(p.converged for p in results))
    for p in results:
        if not p.converged:
            log.warning("partition starting at %s hit max_epochs=%d without converging",
                        p.segment_ids[0], config.max_epochs)
    return SolveResult(state, results, inits[0], tuple(candidates.purged))


def evaluate_choice(segments_or_sd, choice: Mapping[str, str], track_embeddings, diagonal=INCLUDE) -> float:
    """Objective of an arbitrary assignment by direct (non-incremental) evaluation."""
    sd = segments_or_sd
    emb = _track_lookup(track_embeddings)
    fd = build_distance_matrix([emb[choice[s]] for s in sd.order], sd.order)
    return corr_objective(sd, fd, diagonal)
