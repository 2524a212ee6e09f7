import time

import pytest

from velfield import classify, sim

_ACCEPTANCE = {}

# Training scene for the full-size classifier shared by the acceptance checks.
TRAIN_SEED = 1
TRAIN_FRAMES = (0, 60)


@pytest.fixture(scope="session")
def trained_classifier():
    """200 rounds, 250 candidates per round, on two frames of the demo scene."""
    r = sim.generate(sim.demo_scene(), max(TRAIN_FRAMES) + 1, seed=TRAIN_SEED)
    sets = [classify.build_labels(sim.truth_labels(r.truth, f), r.frames[f].shape, subsample_seed=f, image_id=f)
            for f in TRAIN_FRAMES]
    t0 = time.perf_counter()
    clf = classify.train(classify.LabeledPixelSet.concat(sets), {f: r.frames[f] for f in TRAIN_FRAMES},
                         n_rounds=200, candidate_pool_size=250, rng=0)
    clf.train_seconds = time.perf_counter() - t0
    return clf


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion for the terminal summary."""
    def record(number, title, passed, detail):
        line = f"[{'PASS' if passed else 'FAIL'}] AC{number:<2d} {title}: {detail}"
        _ACCEPTANCE[number] = line
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_ACCEPTANCE):
        terminalreporter.write_line(_ACCEPTANCE[k])
