import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from m2dne.graph import TemporalNetwork  # noqa: E402


def net_from_events(events, node_count=None, weights=None, weighted=False):
    """Build a TemporalNetwork directly from (src, dst, time) triples.

    Ids are taken literally as dense ids; times are compressed to consecutive
    epochs starting at 1, preserving order.
    """
    events = sorted(enumerate(events), key=lambda kv: (kv[1][2], kv[0]))
    src = np.array([e[1][0] for e in events], dtype=np.int64)
    dst = np.array([e[1][1] for e in events], dtype=np.int64)
    raw_t = [e[1][2] for e in events]
    distinct = sorted(set(raw_t))
    epoch_of = {rt: k + 1 for k, rt in enumerate(distinct)}
    time = np.array([epoch_of[rt] for rt in raw_t], dtype=np.int64)
    if node_count is None:
        node_count = int(max(src.max(), dst.max())) + 1
    if weights is None:
        w = np.ones(len(events))
    else:
        w = np.asarray([weights[e[0]] for e in events], dtype=np.float64)
    return TemporalNetwork(src=src, dst=dst, time=time, weight=w,
                           node_count=node_count,
                           raw_ids=tuple(str(v) for v in range(node_count)),
                           raw_epochs=tuple(str(rt) for rt in distinct),
                           weighted=weighted)


def two_community_lines(seed=101, nodes=60, n_events=2000, within=0.9,
                        epochs=40, partners_per_node=4, bridges=10,
                        epoch_counts=None):
    """Two communities with a fixed within-community edge pool plus a few
    cross-community bridge pairs; events draw from the pools with the given
    within probability. ``epoch_counts`` optionally pins events per epoch."""
    rng = np.random.default_rng(seed)
    half = nodes // 2
    within_edges = set()
    for block in (range(half), range(half, nodes)):
        block = list(block)
        for v in block:
            others = [u for u in block if u != v]
            for u in rng.choice(others, partners_per_node, replace=False):
                within_edges.add((min(v, int(u)), max(v, int(u))))
    within_edges = sorted(within_edges)
    bridge_edges = set()
    while len(bridge_edges) < bridges:
        a = int(rng.integers(0, half))
        b = int(rng.integers(half, nodes))
        bridge_edges.add((a, b))
    bridge_edges = sorted(bridge_edges)
    pairs = []
    for _ in range(n_events):
        if rng.random() < within:
            pairs.append(within_edges[rng.integers(len(within_edges))])
        else:
            pairs.append(bridge_edges[rng.integers(len(bridge_edges))])
    if epoch_counts is None:
        times = np.sort(rng.integers(1, epochs + 1, n_events))
    else:
        assert sum(epoch_counts) == n_events
        times = np.repeat(np.arange(1, len(epoch_counts) + 1), epoch_counts)
    return "\n".join(f"{a} {b} {t}" for (a, b), t in zip(pairs, times))


@pytest.fixture
def tmp_edges(tmp_path):
    def write(text, name="edges.tsv"):
        path = tmp_path / name
        path.write_text(text if text.endswith("\n") else text + "\n")
        return str(path)
    return write
