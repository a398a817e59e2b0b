"""
Shared fixtures for the test suite.
"""
import os
import sys

# Keep test runs quiet and free of log files
os.environ.setdefault("HEI_LOG_FILE", "")
os.environ.setdefault("HEI_LOG_LEVEL", "WARNING")
os.environ.setdefault("HEI_PROGRESS", "false")

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np
import pytest

from hei.graph import Graph, NodeSplit


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long statistical checks (deselect with -m 'not slow')")


def make_graph(num_nodes, edges, features=None, labels=None, num_classes=None):
    if features is None:
        features = np.eye(num_nodes)
    if labels is None:
        labels = np.zeros(num_nodes, dtype=np.int64)
    return Graph.from_edges(num_nodes, np.asarray(edges, dtype=np.int64).reshape(-1, 2),
                            features, labels, num_classes)


def random_graph(rng, num_nodes, p=0.2, dim=4, num_classes=3):
    upper = np.triu(rng.random((num_nodes, num_nodes)) < p, k=1)
    edges = np.argwhere(upper)
    features = rng.standard_normal((num_nodes, dim))
    labels = rng.integers(0, num_classes, size=num_nodes)
    return Graph.from_edges(num_nodes, edges, features, labels, num_classes)


@pytest.fixture
def path_graph():
    """0-1-2 path."""
    return make_graph(3, [(0, 1), (1, 2)], labels=np.array([0, 0, 1]))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def blob_graph():
    """Three well separated classes, sparse random edges, 60 nodes."""
    gen = np.random.default_rng(7)
    n, c = 60, 3
    labels = np.repeat(np.arange(c), n // c)
    centers = 4.0 * np.eye(c, 5)
    features = centers[labels] + 0.3 * gen.standard_normal((n, 5))
    upper = np.triu(gen.random((n, n)) < 0.08, k=1)
    g = Graph.from_edges(n, np.argwhere(upper), features, labels, c)
    perm = gen.permutation(n)
    split = NodeSplit(train=np.sort(perm[:30]), val=np.sort(perm[30:40]), test=np.sort(perm[40:]))
    return g, split
