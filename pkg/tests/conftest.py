import os
from pathlib import Path

import pytest

# MNIST IDX files: $LTN_GAN_DATA_DIR, else a data/mnist folder next to the checkout
FALLBACK_DATA = Path(__file__).resolve().parents[2] / "data" / "mnist"


def mnist_data_dir() -> Path | None:
    env = os.environ.get("LTN_GAN_DATA_DIR")
    for cand in ([Path(env)] if env else []) + [FALLBACK_DATA]:
        if (cand / "train-images-idx3-ubyte").exists() or (cand / "train-images-idx3-ubyte.gz").exists():
            return cand
    return None


@pytest.fixture
def mnist_dir(monkeypatch):
    path = mnist_data_dir()
    if path is None:
        pytest.skip("MNIST IDX files not found; set LTN_GAN_DATA_DIR")
    monkeypatch.setenv("LTN_GAN_DATA_DIR", str(path))
    return path


# acceptance criteria: each test records (criterion, label, passed, detail)
ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    rows = request.config.stash.setdefault(ACCEPTANCE_KEY, [])

    def record(criterion: int, label: str, passed: bool, detail: str) -> None:
        line = f"criterion {criterion} [{label}] {'PASS' if passed else 'FAIL'}: {detail}"
        rows.append((criterion, label, passed, detail))
        print(line)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    rows = config.stash.get(ACCEPTANCE_KEY, [])
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted({r[0] for r in rows}):
        parts = [r for r in rows if r[0] == crit]
        ok = all(r[2] for r in parts)
        detail = "; ".join(f"{r[1]}: {'ok' if r[2] else 'FAILED'} ({r[3]})" for r in parts)
        terminalreporter.write_line(f"criterion {crit}: {'PASS' if ok else 'FAIL'} | {detail}")
