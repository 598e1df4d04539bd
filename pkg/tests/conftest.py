import numpy as np
import pytest

from backend.domain.models import Box
from backend.domain.nn.networks import build_network
from backend.domain.services.cascade import CascadeNets
from backend.domain.services.toy_faces import generate_toy_corpus
from backend.infrastructure.corpus_store import save_corpus
from backend.infrastructure.weights_store import save_weights, weights_path


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def toy_corpus():
    return generate_toy_corpus(6, image_size=64, seed=3)


@pytest.fixture
def corpus_dir(tmp_path, toy_corpus):
    out = tmp_path / "corpus"
    save_corpus(out, toy_corpus, seed=3)
    return out


@pytest.fixture
def untrained_nets():
    return CascadeNets(pnet=build_network("pnet", seed=0), rnet=build_network("rnet", seed=1), onet=build_network("onet", seed=2))


@pytest.fixture
def ready_nets(untrained_nets):
    """Randomly initialized networks flagged as trained, for exercising cascade plumbing."""
    for net in (untrained_nets.pnet, untrained_nets.rnet, untrained_nets.onet):
        net.trained = True
    return untrained_nets


@pytest.fixture
def make_boxes():
    """Factory for random scored boxes inside an extent×extent square."""

    def random_boxes(rng, count, extent=100.0, scored=True):
        boxes = []
        for _ in range(count):
            x1, y1 = rng.uniform(0, extent, size=2)
            w, h = rng.uniform(2, extent / 2, size=2)
            score = float(rng.uniform(0, 1)) if scored else None
            boxes.append(Box(float(x1), float(y1), float(x1 + w), float(y1 + h), score=score))
        return boxes

    return random_boxes


@pytest.fixture
def weights_dir(tmp_path, untrained_nets):
    """pnet.bin / rnet.bin / onet.bin of randomly initialized networks."""
    out = tmp_path / "weights"
    for net in (untrained_nets.pnet, untrained_nets.rnet, untrained_nets.onet):
        save_weights(net, weights_path(out, net.kind))
    return out
