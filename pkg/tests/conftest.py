import time

import numpy as np
import pytest
import torch
from PIL import Image

from memefuse.synthetic import generate_synthetic_corpus

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def synth(tmp_path_factory):
    """The 16-sample (8 per class) synthetic training fixture, seed 7."""
    out = tmp_path_factory.mktemp("synth")
    corpus, manifest = generate_synthetic_corpus(8, 7, out)
    return corpus, manifest


@pytest.fixture(scope="session")
def synth_corpus(synth):
    return synth[0]


@pytest.fixture(scope="session")
def small_synth(tmp_path_factory):
    out = tmp_path_factory.mktemp("small_synth")
    return generate_synthetic_corpus(2, 3, out)


def write_image(path, size=(32, 32), color=(10, 20, 30), mode="RGB"):
    if mode == "L":
        img = Image.new("L", size, color if isinstance(color, int) else color[0])
    else:
        img = Image.new(mode, size, color)
    img.save(path)
    return path


def random_image(path, size=(40, 40), seed=0, mode="RGB"):
    rng = np.random.default_rng(seed)
    shape = (size[1], size[0]) if mode == "L" else (size[1], size[0], 3)
    Image.fromarray(rng.integers(0, 256, size=shape, dtype=np.uint8), mode).save(path)
    return path


# Plans for the 16-sample overfit fixture: each approach's default plan run for
# 50 epochs without early stopping. The untrained textual stand-ins get a
# larger one-cycle peak, and the fusion models a larger Adam step with more
# steps per epoch (see README, "Overfit fixture").
OVERFIT_OVERRIDES = {
    "visual": {},
    "textual": {"lr": 2e-3},
    "multimodal": {"lr": 1e-2, "batch": 8},
}


@pytest.fixture(scope="session")
def overfit_runs(synth_corpus):
    """Lazily train each reference configuration once on the overfit fixture."""
    from memefuse.experiment import ExperimentConfig, build_model
    from memefuse.training import _targets, evaluate_loss, train

    cache = {}

    def run(approach, key):
        if (approach, key) not in cache:
            cfg = ExperimentConfig(approach=approach, model=key, seed=0)
            model = build_model(cfg, synth_corpus.train)
            x = model.prepare(synth_corpus.train)
            initial_loss, _ = evaluate_loss(model, x, _targets(synth_corpus.train))
            plan = cfg.plan().with_overrides(epochs=50, early_stopping=None, **OVERFIT_OVERRIDES[approach])
            start = time.perf_counter()
            record = train(model, plan, synth_corpus)
            cache[approach, key] = (record, initial_loss, time.perf_counter() - start)
        return cache[approach, key]

    return run


# one "[PASS|FAIL] criterion N: ..." line per acceptance criterion, echoed at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
