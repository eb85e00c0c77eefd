"""Synthetic scenarios with known answers, and an exhaustive oracle for small instances.

Each character owns a unit direction in audio space and one in visual space.
Speech segments and face tracks are those directions perturbed by isotropic
Gaussian noise of expected norm sigma and re-normalized. Every segment gets ``k`` temporally
overlapping tracks: the speaker's face plus distractors, or only distractors when
the speaker is off-screen.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np

from .core import (OFF_SCREEN, CandidateMap, build_candidate_map, make_segment, make_track,
                   save_pairs, save_segments, save_tracks)
from .errors import InvalidConfig, TooLarge
from .identity import INCLUDE, _check_policy, build_distance_matrix, unit_rows
from .solver import AssignmentState

ORACLE_LIMIT = 10 ** 6


@dataclass(frozen=True)
class ScenarioConfig:
    num_characters: int = 4
    num_segments: int = 100
    candidates_per_segment: int = 3
    audio_dim: int = 32
    visual_dim: int = 32
    audio_noise: float = 0.0
    visual_noise: float = 0.0
    offscreen_fraction: float = 0.0
    background_face_fraction: float = 0.0
    num_background: int = 3
    min_separation: float = 0.5
    seed: int = 0
    # groups of characters whose faces are all visible whenever one of them speaks
    cooccurring: Tuple[Tuple[int, ...], ...] = ()
    segment_duration: float = 0.8
    segment_gap: float = 0.2

    def __post_init__(self):
        C, N, k = self.num_characters, self.num_segments, self.candidates_per_segment
        if C < 2 or N < 3 or k < 1:
            raise InvalidConfig("need num_characters >= 2, num_segments >= 3, candidates_per_segment >= 1")
        if self.audio_dim < 1 or self.visual_dim < 1:
            raise InvalidConfig("embedding dimensions must be >= 1")
        if self.audio_noise < 0 or self.visual_noise < 0:
            raise InvalidConfig("noise levels must be >= 0")
        if not 0 <= self.offscreen_fraction < 1 or not 0 <= self.background_face_fraction < 1:
            raise InvalidConfig("fractions must lie in [0, 1)")
        if self.num_background < 0:
            raise InvalidConfig("num_background must be >= 0")
        pool = C - 1 + (self.num_background if self.background_face_fraction > 0 else 0)
        need = k if self.offscreen_fraction > 0 else k - 1
        if need > pool:
            raise InvalidConfig(f"{need} distractor faces per segment needed but only {pool} other characters exist")
        for group in self.cooccurring:
            if len(set(group)) != len(group) or any(not 0 <= c < C for c in group):
                raise InvalidConfig(f"bad co-occurrence group {group}")
            if len(group) > k:
                raise InvalidConfig(f"group {group} does not fit into {k} candidates")
        if not (self.segment_duration > 0 and self.segment_gap >= 0):
            raise InvalidConfig("segment_duration must be > 0 and segment_gap >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cooccurring"] = [list(g) for g in self.cooccurring]
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "ScenarioConfig":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidConfig(f"unknown scenario field(s): {sorted(unknown)}")
        if "cooccurring" in d:
            d["cooccurring"] = tuple(tuple(int(c) for c in g) for g in d["cooccurring"])
        return cls(**d)


def columbia_preset(seed: int = 0, **overrides) -> ScenarioConfig:
    """Panel-like scene where characters 0 and 1 are always on screen together.

    Without extra information, the speech of one of them can be matched to the
    other's face at almost no cost in the objective.
    """
    base = dict(num_characters=5, num_segments=120, candidates_per_segment=2, audio_noise=0.2,
                visual_noise=0.2, offscreen_fraction=0.0, cooccurring=((0, 1),), seed=seed)
    base.update(overrides)
    return ScenarioConfig(**base)


@dataclass
class SyntheticScenario:
    config: ScenarioConfig
    segments: list
    tracks: list
    candidates: CandidateMap
    ground_truth: Dict[str, Optional[str]]
    speaker_of: Dict[str, int]
    track_identity: Dict[str, int]
    audio_directions: np.ndarray
    visual_directions: np.ndarray

    @property
    def offscreen_ids(self) -> List[str]:
        return [s for s, t in self.ground_truth.items() if t is OFF_SCREEN]

    def track_embeddings(self) -> Dict[str, np.ndarray]:
        return {t.id: t.embedding for t in self.tracks}

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_segments(out / "segments.jsonl", self.segments)
        save_tracks(out / "tracks.jsonl", self.tracks)
        save_pairs(out / "groundtruth.jsonl", self.ground_truth)
        meta = {"config": self.config.to_dict(), "speaker_of": self.speaker_of,
                "track_identity": self.track_identity}
        (out / "scenario.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")


def separated_directions(count: int, dim: int, min_distance: float, rng, max_tries: int = 10000) -> np.ndarray:
    """Random unit vectors with pairwise cosine distance >= ``min_distance`` (rejection sampling)."""
    dirs = []
    tries = 0
    while len(dirs) < count:
        tries += 1
        if tries > max_tries:
            raise InvalidConfig(f"could not place {count} directions {min_distance} apart in {dim} dimensions")
        v = rng.standard_normal(dim)
        nv = np.linalg.norm(v)
        if nv == 0:
            continue
        v = v / nv
        if all(1.0 - float(v @ u) >= min_distance for u in dirs):
            dirs.append(v)
    return np.array(dirs)


def _perturb(direction, sigma, rng):
    # per-coordinate std sigma/sqrt(d) gives the noise vector an expected squared norm of sigma**2,
    # so sigma sets the spread around the unit direction whatever the embedding dimension
    if sigma == 0:
        return direction.copy()
    d = direction.shape[0]
    v = direction + (sigma / np.sqrt(d)) * rng.standard_normal(d)
    n = np.linalg.norm(v)
    return v / n if n > 0 else direction.copy()


def generate_scenario(config: ScenarioConfig) -> SyntheticScenario:
    cfg = config
    rng = np.random.default_rng(cfg.seed)
    C, N, k = cfg.num_characters, cfg.num_segments, cfg.candidates_per_segment
    n_bg = cfg.num_background if cfg.background_face_fraction > 0 else 0
    audio_dirs = separated_directions(C, cfg.audio_dim, cfg.min_separation, rng)
    visual_dirs = separated_directions(C + n_bg, cfg.visual_dim, cfg.min_separation, rng)
    group_of = {c: g for g in cfg.cooccurring for c in g}
    step = cfg.segment_duration + cfg.segment_gap

    segments, tracks = [], []
    gt, speaker_of, track_identity = {}, {}, {}
    for n in range(N):
        c = int(rng.integers(C))
        off = bool(rng.random() < cfg.offscreen_fraction)
        visible = [] if off else [c]
        for member in group_of.get(c, ()):
            if member not in visible and not (off and member == c):
                visible.append(member)
        # members of a co-occurrence group are only ever seen together
        others = [x for x in range(C) if x != c and x not in visible and (x not in group_of or off)]
        background = list(range(C, C + n_bg))
        rng.shuffle(others)
        rng.shuffle(background)
        while len(visible) < k:
            use_bg = background and (not others or rng.random() < cfg.background_face_fraction)
            visible.append(background.pop() if use_bg else others.pop())
        start = n * step
        end = start + cfg.segment_duration
        sid = f"s{n:05d}"
        segments.append(make_segment(sid, start, end, _perturb(audio_dirs[c], cfg.audio_noise, rng)))
        speaker_of[sid] = c
        gt[sid] = OFF_SCREEN
        # slot order is random so track ids carry no hint about the speaker
        slots = rng.permutation(len(visible))
        for slot, who in zip(slots, visible):
            tid = f"t{n:05d}_{slot}"
            tracks.append(make_track(tid, start, end, _perturb(visual_dirs[who], cfg.visual_noise, rng)))
            track_identity[tid] = int(who)
            if who == c and not off:
                gt[sid] = tid
    tracks.sort(key=lambda t: (t.start, t.id))
    return SyntheticScenario(cfg, segments, tracks, build_candidate_map(segments, tracks), gt,
                             speaker_of, track_identity, audio_dirs, visual_dirs)


# ------------------------------------------------------------------- oracle

def _batched_objective(sd, fds, diagonal):
    # fds: (B, N, N); plain two-pass Pearson per row, constant rows score 0
    n = sd.shape[0]
    if diagonal == INCLUDE:
        x = np.broadcast_to(sd, fds.shape)
        y = fds
    else:
        mask = ~np.eye(n, dtype=bool)
        x = sd[mask].reshape(n, n - 1)
        x = np.broadcast_to(x, (fds.shape[0], n, n - 1))
        y = fds[:, mask].reshape(fds.shape[0], n, n - 1)
    xc = x - x.mean(axis=-1, keepdims=True)
    yc = y - y.mean(axis=-1, keepdims=True)
    sxx = (xc * xc).sum(-1)
    syy = (yc * yc).sum(-1)
    ok = (sxx > 1e-12 * (x * x).sum(-1)) & (syy > 1e-12 * (y * y).sum(-1)) & (sxx > 0) & (syy > 0)
    r = np.where(ok, (xc * yc).sum(-1) / np.sqrt(np.where(ok, sxx * syy, 1.0)), 0.0)
    return np.clip(r, -1, 1).mean(axis=-1)


def brute_force_oracle(SD, candidates: CandidateMap, track_embeddings: Mapping, diagonal: str = INCLUDE,
                       limit: int = ORACLE_LIMIT, chunk: int = 20000):
    """Exhaustive maximizer of the objective over every candidate combination.

    Ties within 1e-12 go to the lexicographically smallest tuple of track ids.
    Returns ``(AssignmentState, objective)``.
    """
    _check_policy(diagonal)
    order = list(SD.order)
    sd = np.asarray(SD.values, dtype=np.float64)
    cand_lists = [sorted(candidates[s]) for s in order]
    size = 1
    for c in cand_lists:
        size *= len(c)
    if size > limit:
        raise TooLarge(f"{size} assignments exceed the enumeration limit {limit}")
    tids = sorted({t for c in cand_lists for t in c})
    tindex = {t: j for j, t in enumerate(tids)}
    units = unit_rows(np.stack([np.asarray(getattr(track_embeddings[t], "embedding", track_embeddings[t]),
                                           dtype=np.float64) for t in tids]))
    tdist = np.clip(1.0 - units @ units.T, 0.0, 2.0)
    np.fill_diagonal(tdist, 0.0)
    idx_lists = [[tindex[t] for t in c] for c in cand_lists]
    best_val = -np.inf
    best_combo = None
    combos = itertools.product(*idx_lists)
    while True:
        block = np.array(list(itertools.islice(combos, chunk)), dtype=np.int64)
        if block.size == 0:
            break
        block = block.reshape(-1, len(order))
        fds = tdist[block[:, :, None], block[:, None, :]]
        diag = np.arange(len(order))
        fds[:, diag, diag] = 0.0
        vals = _batched_objective(sd, fds, diagonal)
        j = int(np.argmax(vals))
        # product order is lexicographic, so the first maximum within tolerance wins
        if vals[j] > best_val + 1e-12:
            best_val = float(vals[j])
            first = int(np.flatnonzero(vals >= vals[j] - 1e-12)[0])
            best_combo = block[first]
            best_val = float(vals[first])
    choice = {sid: tids[int(a)] for sid, a in zip(order, best_combo)}
    return AssignmentState(choice, best_val, (best_val,)), best_val


def oracle_for_scenario(scn: SyntheticScenario, diagonal: str = INCLUDE):
    ids = [s.id for s in scn.segments if s.id in scn.candidates]
    sd = build_distance_matrix([s.embedding for s in scn.segments if s.id in scn.candidates], ids)
    return brute_force_oracle(sd, scn.candidates, scn.track_embeddings(), diagonal)
