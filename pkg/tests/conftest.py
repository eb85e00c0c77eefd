import numpy as np
import pytest

from crossasd.core import build_candidate_map, make_segment, make_track
from crossasd.synth import ScenarioConfig, generate_scenario


def random_instance(n, k, dim=8, seed=0):
    """Random segments with k random candidate tracks each (no identity structure)."""
    rng = np.random.default_rng(seed)
    segs, tracks = [], []
    for i in range(n):
        segs.append(make_segment(f"s{i:03d}", i, i + 0.5, rng.standard_normal(dim)))
        for j in range(k):
            tracks.append(make_track(f"t{i:03d}_{j}", i, i + 0.5, rng.standard_normal(dim)))
    return segs, tracks, build_candidate_map(segs, tracks)


@pytest.fixture
def small_random():
    return random_instance(6, 2, seed=3)


@pytest.fixture
def clean_scenario():
    return generate_scenario(ScenarioConfig(num_characters=4, num_segments=6, candidates_per_segment=2, seed=1))


def write_jsonl(path, records):
    import json
    path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")
    return path


# one "criterion N: PASS/FAIL ..." line per acceptance criterion, filled by test_acceptance.py
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
