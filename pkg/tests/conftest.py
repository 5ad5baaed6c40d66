import sys

import numpy as np
import pytest

from raunet.tensor import Precision, Tensor

F64 = Precision.F64


def t64(data, grad=False):
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=grad, precision=F64)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


TINY_GEN = dict(image_size=(32, 32), num_instruments=3, train_images=8, test_images=4, group_size=4,
                foreground_ratio_target=0.08, seed=11)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """A 32x32, 3-instrument dataset with 8 train and 4 test images; returns the manifest path."""
    from raunet.data.synth import GenSpec, generate

    root = tmp_path_factory.mktemp("tiny")
    generate(GenSpec(**TINY_GEN), root)
    return root / "manifest.tsv"


@pytest.fixture(scope="session")
def tiny_data(tiny_dataset):
    from raunet.trainer import SegmentationData

    return SegmentationData.from_manifest(tiny_dataset)


def tiny_model_config(**kw):
    from raunet.model import ModelConfig

    base = dict(num_classes=4, width_mult=1 / 8, block_counts=(1, 1, 1, 1), input_size=(32, 32))
    return ModelConfig(**{**base, **kw})


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in module.report_lines():
        terminalreporter.write_line(line)
