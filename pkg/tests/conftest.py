import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from nixtts.model_io import ModelConfig, save_checkpoint, save_teacher_dump, synth_teacher_dump  # noqa: E402
from nixtts.pipeline import init_checkpoint, unpack_checkpoint  # noqa: E402

UTTERANCE = "the quick brown fox jumps over the lazy dog again now"


@pytest.fixture(scope="session")
def student_ckpt():
    return init_checkpoint(ModelConfig(), seed=0)


@pytest.fixture(scope="session")
def student(student_ckpt):
    return unpack_checkpoint(student_ckpt)


@pytest.fixture(scope="session")
def ckpt_path(tmp_path_factory, student_ckpt):
    path = tmp_path_factory.mktemp("ckpt") / "student.nixt"
    save_checkpoint(path, student_ckpt)
    return path


@pytest.fixture(scope="session")
def dump_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("dump") / "teacher.nixt"
    save_teacher_dump(path, synth_teacher_dump(3, 8, 30))
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
