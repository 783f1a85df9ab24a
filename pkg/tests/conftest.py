import pytest

from xferlab import data, tokenization as tk
from xferlab.model import ModelConfig
from xferlab.optim import OptimizerConfig
from xferlab.pipelines import step1_pretrain

SMALL = ModelConfig(n_layers=1, n_heads=2, d_model=16, d_ff=32, max_seq_len=24)


@pytest.fixture(scope="session")
def cipher_world():
    spec = data.SynthSpec(transform="cipher", seed=11)
    res = data.generate_synthetic(spec, 600)
    v1 = tk.build_vocab(res.l1, 80, "L1")
    v2 = tk.build_vocab(res.l2, 80, "L2")
    return spec, res, v1, v2


@pytest.fixture()
def pretrained(cipher_world):
    _, res, v1, _ = cipher_world
    return step1_pretrain(res.l1, v1, SMALL, OptimizerConfig(learning_rate=1e-3, batch_size=8, steps=5), seed=0).model


ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES[number] = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
