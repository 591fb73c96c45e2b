import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from dad.config import load_config  # noqa: E402
from dad.data import load_dataset, write_synthetic_dataset  # noqa: E402

OVERFIT_EPOCHS = 100  # 8 images, batch 4 -> 200 optimizer steps


@pytest.fixture(scope="session")
def synthetic_dir(tmp_path_factory):
    return write_synthetic_dataset(tmp_path_factory.mktemp("synthetic"), n=8, size=64, seed=0)


@pytest.fixture(scope="session")
def synthetic_samples(synthetic_dir):
    return load_dataset(synthetic_dir, 64)


def desk_config(out_dir, **overrides):
    base = {"model.backbone": "tiny", "output_dir": str(out_dir)}
    base.update(overrides)
    return load_config(None, "desk", base)


@pytest.fixture(scope="session")
def overfit_run(tmp_path_factory, synthetic_dir, synthetic_samples):
    """One training run shared by the overfit, evaluation and predict tests."""
    import time

    from dad.training import train
    out = tmp_path_factory.mktemp("overfit")
    cfg = desk_config(out, **{"data.train_dir": str(synthetic_dir),
                              "optim.epochs": OVERFIT_EPOCHS, "optim.checkpoint_every": 0})
    start = time.perf_counter()
    result = train(cfg, synthetic_samples)
    return result, time.perf_counter() - start


@pytest.fixture
def rng():
    return torch.Generator().manual_seed(1234)


ACCEPTANCE_LINES = {}


def record_criterion(number, ok, detail):
    """Store the one-line verdict printed for an acceptance criterion."""
    ACCEPTANCE_LINES[number] = f"{'PASS' if ok else 'FAIL'} criterion {number:>2}: {detail}"
    print(ACCEPTANCE_LINES[number])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
