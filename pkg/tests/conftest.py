import numpy as np
import pytest

from dfkd import data, nn

MOON_TEACHER = "input(2), dense(2,64), relu, dense(64,64), relu, dense(64,2)"


@pytest.fixture(scope="session")
def moons_train():
    return data.make_two_moons(1000, 0.1, seed=0)


@pytest.fixture(scope="session")
def moons_heldout():
    return data.make_two_moons(1000, 0.1, seed=1)


@pytest.fixture(scope="session")
def moon_teacher(moons_train):
    """Teacher trained once per session; tests must not mutate it."""
    t = nn.init_network(MOON_TEACHER, "teacher", seed=0)
    nn.train_classifier(t, moons_train.inputs, moons_train.labels, steps=2000,
                        batch_size=128, lr=1e-3, seed=0)
    return t


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


TINY = """\
task = mnist
teacher_arch = input(1,4,4), flatten, dense(16,8), relu, dense(8,10)
student_arch = input(1,4,4), flatten, dense(16,4), relu, dense(4,10)
generator_arch = input(3), dense(3,16), tanh, reshape(1,4,4)
z_dim = 3
teacher_steps = 5
batch_size = 8
total_steps = 2
eval_every = 1
grid_resolution = 4
n_samples_dump = 4
"""


@pytest.fixture
def fake_mnist(tmp_path):
    rng = np.random.default_rng(0)
    paths = {}
    for split, n in (("train", 40), ("test", 20)):
        paths[f"{split}_images"] = tmp_path / f"{split}-images.idx"
        paths[f"{split}_labels"] = tmp_path / f"{split}-labels.idx"
        data.write_idx(paths[f"{split}_images"], rng.integers(0, 256, (n, 4, 4)))
        data.write_idx(paths[f"{split}_labels"], rng.integers(0, 10, n))
    cfg = tmp_path / "tiny.cfg"
    cfg.write_text(TINY + "".join(f"mnist_{k} = {v}\n" for k, v in paths.items()))
    return tmp_path, cfg, {str(p) for p in paths.values()}


# one line per acceptance criterion, filled in by test_acceptance and echoed at the end
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
