import json

import numpy as np
import pytest

from spikeforge.data import write_idx


@pytest.fixture
def toy_config(tmp_path):
    """A tiny 4x4 'MNIST' on disk plus a config that trains on it."""
    rng = np.random.default_rng(0)

    def make(name, n):
        labels = np.arange(n) % 10
        # class-dependent brightness so the task is learnable
        images = np.clip(rng.normal(labels[:, None, None] * 20 + 40, 30, size=(n, 4, 4)), 0, 255)
        paths = (tmp_path / f"{name}-images", tmp_path / f"{name}-labels")
        write_idx(*paths, images.astype(np.uint8), labels)
        return [str(p) for p in paths]

    tr_i, tr_l = make("train", 60)
    te_i, te_l = make("test", 30)
    cfg = {
        "dataset": {"name": "mnist", "paths": {"train_images": tr_i, "train_labels": tr_l,
                                               "test_images": te_i, "test_labels": te_l}},
        "model": {"layers": [{"kind": "flatten"}, {"kind": "dense", "in": 16, "out": 12},
                             {"kind": "tdbn", "channels": 12}, {"kind": "neuron"},
                             {"kind": "dense", "in": 12, "out": 10}, {"kind": "readout"}],
                  "T": 2},
        "train": {"epochs": 2, "batch": 16, "seed": 3},
        "report": {"bins": 20, "out_dir": str(tmp_path / "out")},
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg, indent=2))
    return path, cfg


ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = []


@pytest.fixture
def acceptance_log(request):
    return request.config.stash[ACCEPTANCE]


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
