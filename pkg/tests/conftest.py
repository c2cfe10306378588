import numpy as np
import pytest

from mergeir.encoder import EncoderConfig, init_encoder, make_domain_variant
from mergeir.experiment import GridSearchConfig
from mergeir.synthetic import make_collection, write_experiment
from mergeir.tensor_store import TensorArchive


@pytest.fixture(scope="session")
def toy_config():
    return EncoderConfig(vocab_size=512, d_model=32, n_layers=8, n_heads=2, d_ff=64, max_seq=64, seed=7)


@pytest.fixture(scope="session")
def toy_pair(toy_config):
    base = init_encoder(toy_config)
    return base, make_domain_variant(base, toy_config, domain_seed=11, strength=0.1)


@pytest.fixture(scope="session")
def default_pair():
    config = EncoderConfig(seed=3)
    base = init_encoder(config)
    return config, base, make_domain_variant(base, config, domain_seed=4, strength=0.1)


@pytest.fixture(scope="session")
def synthetic_manifest(tmp_path_factory):
    return write_experiment(tmp_path_factory.mktemp("synthetic"))


@pytest.fixture(scope="session")
def small_manifest_path(tmp_path_factory):
    """A 4-layer encoder over 60 docs with a 3x3 grid; cheap enough for unit tests."""
    return write_experiment(
        tmp_path_factory.mktemp("small"),
        config=EncoderConfig(vocab_size=512, n_layers=4, seed=5),
        collection=make_collection(n_docs=60, n_dev=12, n_test=10, n_topics=6, seed=2),
        grid=GridSearchConfig(alpha_values=(0.0, 0.5, 1.0)),
    )


def random_archive(rng: np.random.Generator, names=None) -> TensorArchive:
    names = names or ["embed_tokens.weight", "final_norm.weight"] + [
        f"layers.{i}.{s}" for i in range(4) for s in ("attn.wq", "mlp.w1")
    ]
    arrays = {}
    for n in names:
        shape = (6, 4) if n.endswith(("wq", "w1", "embed_tokens.weight")) else (4,)
        arrays[n] = rng.standard_normal(shape).astype(np.float32)
    return TensorArchive.from_arrays(arrays)


# filled by the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
