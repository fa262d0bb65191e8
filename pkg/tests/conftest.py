import numpy as np
import pytest

from tatttrn.model import ModelConfig
from tatttrn.synthgen import build_dataset, generate_glyph_templates, procedural_skin_bases


def tiny_config(**kw) -> ModelConfig:
    d = dict(C=4, K=8, input_side=32, backbone_spec="tiny", unet_width=4, epochs=2,
             batch_size=8, lr=1e-3)
    d.update(kw)
    return ModelConfig(**d)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """4 categories x 6 samples at 32 px."""
    out = tmp_path_factory.mktemp("tiny_ds")
    templates = generate_glyph_templates(4, 32, seed=5)
    bases = procedural_skin_bases(3, 48, 48, seed=6)
    return build_dataset(templates, bases, 6, 1, out, out_side=32)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from acceptance_report import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(RESULTS):
        ok, detail = RESULTS[name]
        terminalreporter.write_line(f"{name} {'PASS' if ok else 'FAIL'}: {detail}")
