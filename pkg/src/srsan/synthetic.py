"""Small generated datasets with a known, learnable next-item rule."""

from __future__ import annotations

import numpy as np

from .data import Session, augment_prefixes


def successor_sessions(n_sessions: int = 2000, n_items: int = 50, min_len: int = 2,
                       max_len: int = 8, seed: int = 0) -> list[list[int]]:
    """Sessions that walk the item ring: each click is the previous one + 1 (mod n_items)."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_sessions):
        start = int(rng.integers(n_items))
        length = int(rng.integers(min_len, max_len + 1))
        out.append([(start + j) % n_items + 1 for j in range(length)])
    return out


def successor_task(n_sessions: int = 2000, n_items: int = 50, seed: int = 0,
                   test_fraction: float = 0.2) -> tuple[list[Session], list[Session]]:
    """Prefix-augmented (train, test) instances of the successor task.

    ``n_sessions`` counts training sessions; the test set is drawn separately.
    """
    train = augment_prefixes(successor_sessions(n_sessions, n_items, seed=seed))
    n_test = max(1, int(round(n_sessions * test_fraction)))
    test = augment_prefixes(successor_sessions(n_test, n_items, seed=seed + 10_000))
    return train, test


def first_item_instances(n: int, n_anchors: int = 80, n_fillers: int = 20, min_len: int = 2,
                         max_len: int = 8, seed: int = 0) -> list[Session]:
    """Instances whose label depends only on the first click.

    Items ``1..n_anchors`` are anchors and open every session; the remaining
    clicks are fillers ``n_anchors+1 .. n_anchors+n_fillers``.  The label is
    the anchor ``(first + 7) mod n_anchors``, so it can only be recovered by
    attending from the last click back to the first.
    """
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        anchor = int(rng.integers(n_anchors))
        length = int(rng.integers(min_len, max_len + 1))
        fillers = rng.integers(n_fillers, size=length - 1) + n_anchors + 1
        items = [anchor + 1] + [int(f) for f in fillers]
        out.append(Session(items, (anchor + 7) % n_anchors + 1))
    return out


def first_item_task(n_sessions: int = 2000, n_anchors: int = 80, n_fillers: int = 20,
                    seed: int = 0, test_fraction: float = 0.2) -> tuple[list[Session], list[Session]]:
    train = first_item_instances(n_sessions, n_anchors, n_fillers, seed=seed)
    n_test = max(1, int(round(n_sessions * test_fraction)))
    test = first_item_instances(n_test, n_anchors, n_fillers, seed=seed + 10_000)
    return train, test
