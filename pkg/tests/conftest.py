import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from ctxpaint.denoiser import DenoiserConfig  # noqa: E402

from _toy import build_toy  # noqa: E402


@pytest.fixture
def tiny_config():
    """Four 4x4 patches, one block each side: small enough for finite differences."""
    return DenoiserConfig(image_size=8, patch_size=4, channels=3, embed_dim=8, enc_depth=1,
                          dec_depth=1, enc_heads=2, dec_heads=2, mlp_ratio=2, time_embed_dim=8)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def toy_run(tmp_path_factory):
    root = os.environ.get("CTXPAINT_TOY_DIR") or str(tmp_path_factory.mktemp("toy"))
    return build_toy(root)


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
