"""Command-line front end: ``crossasd {segment,assign,eval,synth,oracle}``.

Every option can also be set through an environment variable named
``CROSSASD_<OPTION>`` (upper case, dashes as underscores), e.g.
``CROSSASD_TAU=0.2``. Command-line flags win over the environment.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .core import (OFF_SCREEN, CandidateMap, _read_jsonl, build_candidate_map, load_ground_truth, load_pins, load_segments,
                   load_tracks, write_jsonl)
from .errors import CrossAsdError, ParseError, ValidationError
from .identity import DIAGONAL_POLICIES, INCLUDE, build_distance_matrix, save_matrix
from .metrics import (confusion_metrics, mann_whitney_u, mean_average_precision, pr_curve, ranked_units,
                      roc_auc)
from .offscreen import DEFAULT_TAU, classify_offscreen, offscreen_roc, SegmentScore
from .preprocess import DEFAULT_MAX_DURATION, load_shots, load_vad, proxy_segments, save_proxy_segments
from .solver import DEFAULT_PARTITION_SIZE, DEFAULT_RESTARTS, SolverConfig, solve
from .synth import ScenarioConfig, columbia_preset, generate_scenario, brute_force_oracle

log = logging.getLogger("crossasd")

ENV_PREFIX = "CROSSASD_"
EXIT_OK, EXIT_ERROR, EXIT_NOT_CONVERGED = 0, 1, 2

REFERENCE_DEFAULTS = {"partition_size": DEFAULT_PARTITION_SIZE, "tau": DEFAULT_TAU, "max_dur": DEFAULT_MAX_DURATION}


# ------------------------------------------------------------------ assign

def load_assignments(path):
    """Read ``assignments.jsonl`` back into records (validated)."""
    out = []
    seen = set()
    for lineno, rec in _read_jsonl(path):
        for key in ("segment_id", "track_id", "score"):
            if key not in rec:
                raise ParseError(f"missing field: {key}", path, lineno)
        sid, tid, score = rec["segment_id"], rec["track_id"], rec["score"]
        if not isinstance(sid, str) or not (tid is None or isinstance(tid, str)):
            raise ParseError("segment_id must be a string and track_id a string or null", path, lineno)
        if isinstance(score, bool) or not isinstance(score, (int, float)) or not -1.0 <= score <= 1.0:
            raise ParseError("score must be a number in [-1, 1]", path, lineno)
        if "offscreen" in rec and not isinstance(rec["offscreen"], bool):
            raise ParseError("offscreen must be a boolean", path, lineno)
        if rec.get("offscreen") and tid is not None:
            raise ParseError("an offscreen record must have a null track_id", path, lineno)
        if sid in seen:
            raise ValidationError("duplicate assignment", sid)
        seen.add(sid)
        out.append(rec)
    return out


def _deviations(opts):
    dev = []
    for key, default in REFERENCE_DEFAULTS.items():
        val = getattr(opts, key, default)
        if val != default:
            dev.append(f"{key}={val} (reference default {default})")
    if getattr(opts, "no_stage2", False):
        dev.append("stage 2 disabled")
    return dev


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def run_assign(opts) -> int:
    segments = load_segments(opts.segments)
    tracks = load_tracks(opts.tracks)
    candidates = build_candidate_map(segments, tracks, opts.min_overlap)
    pins = load_pins(opts.pins) if opts.pins else {}
    config = SolverConfig(partition_size=opts.partition_size, max_epochs=opts.max_epochs, seed=opts.seed,
                          diagonal_policy=opts.diagonal, restarts=opts.restarts, workers=opts.workers)
    result = solve(segments, tracks, candidates, config, pins)
    scores = result.scores
    state = result.state
    removed = []
    if not opts.no_stage2:
        ordered = [SegmentScore(s, scores[s]) for s in state.choice]
        state, removed = classify_offscreen(ordered, opts.tau, state)

    out = Path(opts.out)
    out.mkdir(parents=True, exist_ok=True)
    video_of = {s.id: s.video for s in segments}
    records = []
    for sid, tid in state.choice.items():
        rec = {"segment_id": sid, "track_id": tid, "score": float(scores[sid])}
        if not opts.no_stage2:
            rec["offscreen"] = tid is OFF_SCREEN
            if tid is OFF_SCREEN:
                rec["stage1_track_id"] = result.state.choice[sid]
        if video_of.get(sid):
            rec["video"] = video_of[sid]
        records.append(rec)
    write_jsonl(out / "assignments.jsonl", records)

    if opts.dump_matrices:
        mdir = out / "matrices"
        mdir.mkdir(exist_ok=True)
        for j, p in enumerate(result.partitions):
            save_matrix(mdir / f"partition_{j:03d}_sd.csv", p.sd)
            save_matrix(mdir / f"partition_{j:03d}_fd.csv", p.fd)

    if opts.ground_truth:
        gt = load_ground_truth(opts.ground_truth, tracks)
        rows = offscreen_roc(scores, {s: gt[s] is OFF_SCREEN for s in scores if s in gt})
        with open(out / "offscreen_roc.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["tau", "tpr", "fpr"])
            w.writerows(rows)

    meta = {
        "version": __version__,
        "backend": kernels.BACKEND,
        "command": "assign",
        "inputs": {"segments": str(opts.segments), "tracks": str(opts.tracks), "pins": opts.pins},
        "input_sha256": {k: _sha256(v) for k, v in
                         (("segments", opts.segments), ("tracks", opts.tracks), ("pins", opts.pins)) if v},
        "config": {
            "seed": opts.seed, "partition_size": opts.partition_size, "max_epochs": opts.max_epochs,
            "convergence_eps": config.convergence_eps, "tie_eps": config.tie_eps,
            "diagonal_policy": opts.diagonal, "restarts": opts.restarts, "workers": opts.workers,
            "tau": opts.tau, "min_overlap": opts.min_overlap, "stage2": not opts.no_stage2,
        },
        "deviations_from_reference_defaults": _deviations(opts),
        "num_segments": len(segments),
        "purged": list(candidates.purged),
        "num_pins": len(pins),
        "objective": float(result.state.objective),
        "converged": result.state.converged,
        "epoch_history": list(result.state.epoch_history),
        "partitions": [
            {"first": p.segment_ids[0], "last": p.segment_ids[-1], "size": len(p.segment_ids),
             "objective": p.objective, "epoch_history": p.epoch_history, "converged": p.converged,
             "restart_objectives": p.restart_objectives, "best_restart": p.best_restart}
            for p in result.partitions
        ],
        "offscreen_removed": len(removed),
    }
    (out / "run.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    log.info("assigned %d segments (%d purged, %d flagged off-screen), objective %.6f",
             len(records), len(candidates.purged), len(removed), meta["objective"])
    if opts.strict and not result.state.converged:
        _error_report("NotConverged", f"max_epochs={opts.max_epochs} reached before convergence")
        return EXIT_NOT_CONVERGED
    return EXIT_OK


# -------------------------------------------------------------------- eval

def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def run_eval(opts) -> int:
    records = load_assignments(opts.assignments)
    tracks = load_tracks(opts.tracks) if opts.tracks else None
    gt = load_ground_truth(opts.ground_truth, tracks)
    candidates = None
    if opts.segments and tracks is not None:
        segments = load_segments(opts.segments)
        candidates = build_candidate_map(segments, tracks, opts.min_overlap)
    weights = None
    if opts.weight_frames and tracks is not None:
        weights = {t.id: t.frame_count for t in tracks if t.frame_count}

    missing = [r["segment_id"] for r in records if r["segment_id"] not in gt]
    if missing:
        raise ValidationError(f"{len(missing)} assigned segment(s) absent from ground truth", missing[0])
    pred = {r["segment_id"]: r["track_id"] for r in records}
    ranking_pred = {r["segment_id"]: r.get("stage1_track_id", r["track_id"]) for r in records}
    scores = {r["segment_id"]: float(r["score"]) for r in records}
    gt_eval = {s: gt[s] for s in pred}
    if candidates is not None:
        candidates = CandidateMap({s: c for s, c in candidates.entries.items() if s in pred})

    report = confusion_metrics(pred, gt_eval, candidates, weights)
    for w in report.warnings:
        log.warning(w)

    videos = {}
    video_of = {r["segment_id"]: r.get("video", "") for r in records}
    units = ranked_units(ranking_pred, scores, gt_eval, candidates, weights)
    for u in units:
        videos.setdefault(video_of.get(u.unit_id.split("|", 1)[0], ""), []).append(u)
    try:
        report.mAP, report.ap_per_video = mean_average_precision(videos)
    except CrossAsdError as exc:
        report.warnings.append(f"mAP unavailable: {exc}")

    off = {s: gt_eval[s] is OFF_SCREEN for s in scores if s in gt_eval}
    labels = np.array([off[s] for s in off])
    vals = np.array([scores[s] for s in off])
    roc_rows = []
    if labels.any() and (~labels).any():
        # off-screen is the positive class, ranked by low correlation
        report.auROC, _ = roc_auc(-vals, labels)
        mw = mann_whitney_u(vals[~labels], vals[labels])
        report.mann_whitney = {"u_onscreen": mw.statistic, "pvalue": mw.pvalue, "method": mw.method,
                               "n_onscreen": int((~labels).sum()), "n_offscreen": int(labels.sum())}
        roc_rows = offscreen_roc(scores, off)
    else:
        report.warnings.append("auROC unavailable: ground truth lacks on-screen or off-screen segments")

    out = Path(opts.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
    _write_csv(out / "pr_curve.csv", ["threshold", "precision", "recall"], pr_curve(units))
    if roc_rows:
        _write_csv(out / "roc_curve.csv", ["tau", "tpr", "fpr"], roc_rows)
    print(json.dumps({k: getattr(report, k) for k in ("precision", "recall", "f1", "mAP", "auROC")}))
    return EXIT_OK


# ------------------------------------------------------- segment / synth / oracle

def run_segment(opts) -> int:
    regions = load_vad(opts.vad)
    shots = load_shots(opts.shots) if opts.shots else []
    intervals = proxy_segments(regions, shots, opts.max_dur, opts.min_duration)
    Path(opts.out).parent.mkdir(parents=True, exist_ok=True)
    save_proxy_segments(opts.out, intervals)
    log.info("wrote %d proxy segments", len(intervals))
    return EXIT_OK


def run_synth(opts) -> int:
    if opts.config:
        cfg = ScenarioConfig.from_dict(json.loads(Path(opts.config).read_text(encoding="utf-8")))
    elif opts.preset == "columbia":
        cfg = columbia_preset(opts.seed)
    else:
        cfg = ScenarioConfig(num_characters=opts.characters, num_segments=opts.num_segments,
                             candidates_per_segment=opts.candidates, audio_dim=opts.audio_dim,
                             visual_dim=opts.visual_dim, audio_noise=opts.audio_noise,
                             visual_noise=opts.visual_noise, offscreen_fraction=opts.offscreen_fraction,
                             background_face_fraction=opts.background_fraction, seed=opts.seed)
    scn = generate_scenario(cfg)
    scn.write(opts.out)
    if opts.pin_fraction:
        from .core import save_pairs
        from .solver import pins_from_ground_truth
        pins = pins_from_ground_truth(scn.ground_truth, scn.speaker_of, opts.pin_fraction, cfg.seed)
        save_pairs(Path(opts.out) / "pins.jsonl", pins)
    log.info("wrote scenario with %d segments and %d tracks to %s", len(scn.segments), len(scn.tracks), opts.out)
    return EXIT_OK


def run_oracle(opts) -> int:
    segments = load_segments(opts.segments)
    tracks = load_tracks(opts.tracks)
    candidates = build_candidate_map(segments, tracks, opts.min_overlap)
    kept = [s for s in segments if s.id in candidates]
    sd = build_distance_matrix([s.embedding for s in kept], [s.id for s in kept])
    emb = {t.id: t.embedding for t in tracks}
    best_state, best = brute_force_oracle(sd, candidates, emb, opts.diagonal)
    config = SolverConfig(partition_size=max(len(kept), 3), seed=opts.seed, diagonal_policy=opts.diagonal,
                          restarts=opts.restarts)
    result = solve(segments, tracks, candidates, config)
    out = {
        "oracle_objective": best,
        "solver_objective": result.state.objective,
        "gap": best - result.state.objective,
        "solver_matches_oracle": bool(abs(best - result.state.objective) <= 1e-9),
        "oracle_choice": dict(best_state.choice),
        "solver_choice": dict(result.state.choice),
    }
    text = json.dumps(out, indent=2) + "\n"
    if opts.out:
        Path(opts.out).parent.mkdir(parents=True, exist_ok=True)
        Path(opts.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


# ------------------------------------------------------------------ parser

def _env_defaults(parser: argparse.ArgumentParser) -> None:
    """Apply CROSSASD_* environment overrides as parser defaults."""
    for action in parser._actions:
        if not action.option_strings or action.dest in ("help",):
            continue
        raw = os.environ.get(ENV_PREFIX + action.dest.upper())
        if raw is None:
            continue
        if isinstance(action, (argparse._StoreTrueAction,)):
            val = raw.strip().lower() in ("1", "true", "yes", "on")
        elif action.type is not None:
            val = action.type(raw)
        else:
            val = raw
        parser.set_defaults(**{action.dest: val})


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="crossasd", description="Unsupervised cross-modal active speaker detection.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("segment", help="cut VAD regions into proxy speaker-homogeneous segments")
    s.add_argument("--vad", required=True)
    s.add_argument("--shots")
    s.add_argument("--max-dur", type=float, default=DEFAULT_MAX_DURATION)
    s.add_argument("--min-duration", type=float, default=0.0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=run_segment)

    a = sub.add_parser("assign", help="stage 1 speech-face assignment plus stage 2 off-screen correction")
    a.add_argument("--segments", required=True)
    a.add_argument("--tracks", required=True)
    a.add_argument("--ground-truth", help="optional; enables the off-screen ROC table")
    a.add_argument("--pins")
    a.add_argument("--partition-size", type=int, default=DEFAULT_PARTITION_SIZE)
    a.add_argument("--tau", type=float, default=DEFAULT_TAU)
    a.add_argument("--min-overlap", type=float, default=0.0)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--max-epochs", type=int, default=50)
    a.add_argument("--restarts", type=int, default=DEFAULT_RESTARTS)
    a.add_argument("--workers", type=int, default=1)
    a.add_argument("--diagonal", choices=DIAGONAL_POLICIES, default=INCLUDE)
    a.add_argument("--no-stage2", action="store_true")
    a.add_argument("--dump-matrices", action="store_true")
    a.add_argument("--strict", action="store_true", help="exit 2 when a partition does not converge")
    a.add_argument("--out", required=True)
    a.set_defaults(func=run_assign)

    e = sub.add_parser("eval", help="score assignments against ground truth")
    e.add_argument("--assignments", required=True)
    e.add_argument("--ground-truth", required=True)
    e.add_argument("--segments")
    e.add_argument("--tracks")
    e.add_argument("--min-overlap", type=float, default=0.0)
    e.add_argument("--weight-frames", action="store_true")
    e.add_argument("--out", required=True)
    e.set_defaults(func=run_eval)

    y = sub.add_parser("synth", help="write a synthetic scenario with ground truth")
    y.add_argument("--config", help="ScenarioConfig as JSON")
    y.add_argument("--preset", choices=["columbia"])
    y.add_argument("--characters", type=int, default=4)
    y.add_argument("--num-segments", type=int, default=100)
    y.add_argument("--candidates", type=int, default=3)
    y.add_argument("--audio-dim", type=int, default=32)
    y.add_argument("--visual-dim", type=int, default=32)
    y.add_argument("--audio-noise", type=float, default=0.0)
    y.add_argument("--visual-noise", type=float, default=0.0)
    y.add_argument("--offscreen-fraction", type=float, default=0.0)
    y.add_argument("--background-fraction", type=float, default=0.0)
    y.add_argument("--pin-fraction", type=float, default=0.0)
    y.add_argument("--seed", type=int, default=0)
    y.add_argument("--out", required=True)
    y.set_defaults(func=run_synth)

    o = sub.add_parser("oracle", help="compare the solver against exhaustive search on a small instance")
    o.add_argument("--segments", required=True)
    o.add_argument("--tracks", required=True)
    o.add_argument("--min-overlap", type=float, default=0.0)
    o.add_argument("--diagonal", choices=DIAGONAL_POLICIES, default=INCLUDE)
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--restarts", type=int, default=DEFAULT_RESTARTS)
    o.add_argument("--out")
    o.set_defaults(func=run_oracle)

    for parser in (p, s, a, e, y, o):
        _env_defaults(parser)
    return p


def _error_report(kind, message, **extra):
    sys.stderr.write(json.dumps({"error": kind, "message": message, **extra}) + "\n")


def main(argv=None) -> int:
    parser = build_parser()
    opts = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if opts.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return opts.func(opts)
    except CrossAsdError as exc:
        extra = {}
        if getattr(exc, "item_id", None) is not None:
            extra["id"] = exc.item_id
        if getattr(exc, "line", None) is not None:
            extra["line"] = exc.line
        _error_report(type(exc).__name__, str(exc), **extra)
        return EXIT_ERROR
    except (OSError, json.JSONDecodeError) as exc:
        _error_report(type(exc).__name__, str(exc))
        return EXIT_ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
