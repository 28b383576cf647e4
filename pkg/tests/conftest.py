import os
from pathlib import Path

import numpy as np
import pytest

from fedtop import data as dt
from fedtop.fedsim import Federation
from fedtop.numkit import RngStream
from fedtop.objectives import LogisticShard

DEFAULT_MNIST = Path("/root/data/mnist")


def toy_federation(M=5, n=4, d_m=30, seed=0, server=True, test=True, kappa=0.001, logit_scale=3.0):
    """Small iid logistic federation built from the synthetic generator."""
    total = d_m * (M + int(server) + int(test))
    ds, _ = dt.synth_sparse_logistic(n, total, 0.5, RngStream(seed, "toy"), logit_scale)
    t = ds.labels.astype(float)
    chunks = np.array_split(np.arange(total), M + int(server) + int(test))
    shards = [LogisticShard(ds.A[:, c], t[c], kappa) for c in chunks]
    clients = shards[:M]
    srv = shards[M] if server else None
    tst = shards[-1] if test else None
    return Federation(clients, srv, tst)


@pytest.fixture
def toy():
    return toy_federation


@pytest.fixture(scope="session")
def mnist_dir():
    d = os.environ.get(dt.DATA_DIR_ENV) or (str(DEFAULT_MNIST) if DEFAULT_MNIST.exists() else None)
    if d is None:
        pytest.skip(f"MNIST not available; set ${dt.DATA_DIR_ENV}")
    try:
        dt.find_mnist(d)
    except FileNotFoundError as exc:
        pytest.skip(str(exc))
    return d
