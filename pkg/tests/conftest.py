import numpy as np
import pytest

from aed_eend import numerics as nx
from aed_eend.model import (
    ModelConfig,
    bce_loss,
    build_enrollment,
    decode_attractors,
    encode,
    extract_enrollment,
    init_parameters,
    posteriors,
)


def tiny_config(**kw):
    base = dict(D=16, n_heads=2, enc_layers=2, dec_layers=2, ffn_dim=32, F_in=8, dropout=0.0)
    base.update(kw)
    return ModelConfig(**base)


def enrolled_loss(p, x, labels, windows, E=None):
    """Loss with enrollment vectors averaged from E over fixed windows
    (None = zero slot), so gradients reach the encoder through them."""
    if E is None:
        E = encode(x, p)
    vecs = [None if w is None else extract_enrollment(E, w) for w in windows]
    A = decode_attractors(build_enrollment(p, vecs), E, p)
    return bce_loss(posteriors(A, E), labels)


@pytest.fixture(autouse=True)
def _float64():
    nx.set_precision(64)
    yield
    nx.set_precision(64)


@pytest.fixture
def tiny_params():
    return init_parameters(tiny_config(), seed=3)
