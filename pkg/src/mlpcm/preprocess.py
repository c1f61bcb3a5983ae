"""Network preprocessing: log-scale compression of weights and ego-network extraction."""

from __future__ import annotations

from typing import Union

import numpy as np

from .types import Network, ValidationError

__all__ = ["log2_round", "log2_round_transform", "ego_extract", "EmptyNetworkError"]


class EmptyNetworkError(ValidationError):
    """Raised when a preprocessing step leaves no nodes."""


def log2_round(x):
    """floor(log2(x + 1) + 0.5) elementwise for non-negative integers."""
    arr = np.asarray(x)
    if np.any(arr < 0):
        raise ValidationError("log2_round needs non-negative input")
    out = np.floor(np.log2(arr.astype(np.float64) + 1.0) + 0.5).astype(np.int64)
    return int(out) if out.ndim == 0 else out


def log2_round_transform(net: Network) -> Network:
    """Apply ``log2_round`` to every weight; zeros stay zero, labels are kept."""
    return Network(log2_round(net.weights), net.node_labels)


def _resolve(net: Network, ego: Union[int, str]) -> int:
    labels = net.labels()
    key = str(ego)
    if key in labels:
        return labels.index(key)
    raise ValidationError(f"unknown ego node {ego!r}")


def ego_extract(net: Network, ego: Union[int, str]) -> Network:
    """Alters of ``ego`` and the edges among them.

    Keeps nodes with an edge to or from the ego, removes the ego, then drops
    nodes left without any edge. Labels are carried over and order is kept.
    ``ego`` is matched against node labels (default labels are "1".."N").
    """
    e = _resolve(net, ego)
    y = net.weights
    alters = np.flatnonzero((y[e] > 0) | (y[:, e] > 0))
    alters = alters[alters != e]
    if alters.size == 0:
        raise EmptyNetworkError(f"ego {ego!r} has no neighbours")
    sub = y[np.ix_(alters, alters)]
    keep = (sub.sum(axis=0) + sub.sum(axis=1)) > 0
    if not keep.any():
        raise EmptyNetworkError(f"no edges remain among the neighbours of {ego!r}")
    idx = alters[keep]
    labels = net.labels()
    return Network(y[np.ix_(idx, idx)].copy(), tuple(labels[i] for i in idx))
