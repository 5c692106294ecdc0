import time

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from protoaudio import dsp, pipeline, synthetic
from protoaudio.embed import ToyBackbone
from protoaudio.objective import LossConfig
from protoaudio.protonet import init_bank
from protoaudio.trainer import EmbeddingDataset, TrainConfig, fit

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

N_TRAIN, N_TEST = 400, 100

# wall-clock seconds of the shared e2e fixtures, and one line per acceptance criterion
TIMINGS = {}
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
TRAIN_SEED, TEST_SEED = 1, 2


@pytest.fixture(scope="session")
def dsp_cfg():
    return dsp.DspConfig()


@pytest.fixture(scope="session")
def backbone():
    return ToyBackbone()


@pytest.fixture(scope="session")
def corpus(dsp_cfg, backbone):
    """400/100 planted-motif clips with their embeddings (about 40 s to build)."""
    start = time.perf_counter()
    train = synthetic.make_corpus(N_TRAIN, TRAIN_SEED, dsp_cfg, "tr")
    test = synthetic.make_corpus(N_TEST, TEST_SEED, dsp_cfg, "te")
    out = {
        "train": train,
        "test": test,
        "z_train": pipeline.embed_many([c.waveform for c in train], dsp_cfg, backbone),
        "z_test": pipeline.embed_many([c.waveform for c in test], dsp_cfg, backbone),
        "y_train": np.stack([c.labels for c in train]),
        "y_test": np.stack([c.labels for c in test]),
    }
    TIMINGS["corpus"] = time.perf_counter() - start
    return out


E2E_TRAIN = TrainConfig(epochs=30, batch_size=32, seed=0)


@pytest.fixture(scope="session")
def trained(corpus):
    """Banks fitted with J=1 and J=5 prototypes per class."""
    out = {}
    start = time.perf_counter()
    for j in (1, 5):
        bank = init_bank(len(synthetic.MOTIFS), j, corpus["z_train"].shape[-1], seed=0,
                         class_names=[m[0] for m in synthetic.MOTIFS])
        state = fit(bank, EmbeddingDataset(corpus["z_train"], corpus["y_train"]), None,
                    E2E_TRAIN, LossConfig())
        out[j] = state.bank
    TIMINGS["fit"] = time.perf_counter() - start
    return out
