import pytest
from hypothesis import settings

from crnn.data import generate_dataset
from crnn.features import CnnTrainConfig, train_cnn
from crnn.pipeline import crop_set, extract_features, fit_on, standardized

settings.register_profile("default", deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def small_set():
    """Twenty synthetic sequences with CNN features, standardised on themselves."""
    samples = generate_dataset(20, seed=5)
    frames, labels = crop_set(samples)
    cnn = train_cnn(frames, labels, CnnTrainConfig(epochs=15, seed=5)).params
    extract_features(samples, cnn)
    std = fit_on(samples)
    return {"cnn": cnn, "std": std, "raw": samples, "samples": standardized(samples, std)}


_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line for the end-of-run acceptance summary, then assert."""

    def record(number, title, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'}  criterion {number}: {title} ({detail})"
        request.config.stash[_ACCEPTANCE].append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
