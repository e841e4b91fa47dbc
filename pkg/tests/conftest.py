import numpy as np
import pytest

from midl_rl.toy import generate_toy_dataset
from midl_rl.world_model import ModelConfig, train_ensemble

SMALL_MODEL = ModelConfig(n_models=3, n_elites=2, hidden=64, layers=2, lr=1e-3, epochs=150)


@pytest.fixture(scope="session")
def toy_data():
    return generate_toy_dataset(seed=0)


@pytest.fixture(scope="session")
def small_ensemble(toy_data):
    return train_ensemble(toy_data, SMALL_MODEL, rng=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


SMALL_CONFIG = """
[model]
n_models = 2
n_elites = 1
hidden = 16
layers = 2
epochs = 5

[agent]
iterations = 20
hidden = 16
batch_size = 32
rollout_every = 10
rollout_count = 20
buffer_capacity = 1000

[discriminator]
hidden = 16
warmup = 10
steps = 2

[run]
checkpoint_every = 10
eval_episodes = 50
"""


@pytest.fixture
def small_config_file(tmp_path):
    path = tmp_path / "small.ini"
    path.write_text(SMALL_CONFIG)
    return path


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))
                           if s.split()[1].rstrip(":").isdigit() else 99):
            terminalreporter.write_line(line)
