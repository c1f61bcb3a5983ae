"""File formats: networks, states, ground truth, tables and run manifests.

Floats are written with 17 significant digits so that text output is a
lossless, byte-stable function of the in-memory values.
"""

from __future__ import annotations

import csv
import hashlib
import io as _stdio
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union

import numpy as np

from .types import LatentConfig, Network, ValidationError, VariationalState

__all__ = [
    "NetworkFormatError",
    "format_float",
    "dumps_json",
    "write_json",
    "read_json",
    "read_network",
    "write_network",
    "parse_network",
    "network_to_text",
    "state_to_dict",
    "state_from_dict",
    "truth_to_dict",
    "truth_from_dict",
    "write_csv",
    "RunManifest",
    "file_sha256",
]

PathLike = Union[str, Path]
FORMATS = ("edge_list", "adjacency_csv")


class NetworkFormatError(ValidationError):
    """Malformed network file; the message names the offending line."""


def format_float(x: float) -> str:
    x = float(x)
    if not math.isfinite(x):
        raise ValidationError(f"cannot serialize non-finite value {x!r}")
    return format(x, ".17g")


def _encode(obj: Any, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return format_float(obj)
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, np.ndarray):
        return _encode(obj.tolist(), indent, level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k), ensure_ascii=False)}: {_encode(v, indent, level + 1)}"
                 for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj):
            return "[" + ", ".join(_encode(v, indent, level + 1) for v in obj) + "]"
        items = [pad + _encode(v, indent, level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps_json(obj: Any, indent: int = 2) -> str:
    return _encode(obj, indent, 0) + "\n"


def write_json(path: PathLike, obj: Any) -> None:
    Path(path).write_text(dumps_json(obj), encoding="utf-8", newline="\n")


def read_json(path: PathLike) -> Any:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def file_sha256(path: PathLike) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# --- networks -------------------------------------------------------------

def _parse_count(token: str, lineno: int) -> int:
    token = token.strip()
    try:
        value = float(token)
    except ValueError:
        raise NetworkFormatError(f"line {lineno}: weight {token!r} is not a number") from None
    if not math.isfinite(value) or value != math.floor(value):
        raise NetworkFormatError(f"line {lineno}: weight {token!r} is not an integer")
    if value < 0:
        raise NetworkFormatError(f"line {lineno}: weight {token!r} is negative")
    return int(value)


def _is_positive_int(token: str) -> bool:
    return token.isdigit() and int(token) >= 1


def _rows(text: str):
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        yield lineno, next(csv.reader([stripped]))


def _parse_edge_list(text: str) -> Network:
    rows = []
    for lineno, fields in _rows(text):
        if len(fields) != 3:
            raise NetworkFormatError(f"line {lineno}: expected src,dst,weight")
        src, dst, w = (f.strip() for f in fields)
        if not rows and (src, dst, w) == ("src", "dst", "weight"):
            continue
        if src == dst:
            raise NetworkFormatError(f"line {lineno}: self-edge on node {src!r}")
        rows.append((lineno, src, dst, _parse_count(w, lineno)))
    if not rows:
        raise NetworkFormatError("edge list has no rows")
    if all(_is_positive_int(s) and _is_positive_int(t) for _, s, t, _ in rows):
        n = max(max(int(s), int(t)) for _, s, t, _ in rows)
        index = {str(i + 1): i for i in range(n)}
        labels = None
    else:
        index = {}
        for _, s, t, _ in rows:
            for lab in (s, t):
                index.setdefault(lab, len(index))
        n = len(index)
        labels = tuple(index)
    if n < 2:
        raise NetworkFormatError("a network needs at least two nodes")
    y = np.zeros((n, n), dtype=np.int64)
    for _, s, t, w in rows:
        y[index[s], index[t]] += w
    return Network(y, labels)


def _parse_adjacency(text: str) -> Network:
    rows = list(_rows(text))
    if not rows:
        raise NetworkFormatError("adjacency file is empty")
    labels = None
    first_line, first = rows[0]
    try:
        [float(x) for x in first]
    except ValueError:
        labels = tuple(x.strip() for x in first)
        rows = rows[1:]
    n = len(rows)
    y = np.zeros((n, n), dtype=np.int64)
    for i, (lineno, fields) in enumerate(rows):
        if len(fields) != n:
            raise NetworkFormatError(f"line {lineno}: expected {n} columns, found {len(fields)}")
        y[i] = [_parse_count(f, lineno) for f in fields]
        if y[i, i] != 0:
            raise NetworkFormatError(f"line {lineno}: non-zero diagonal entry")
    if labels is not None and len(labels) != n:
        raise NetworkFormatError(f"line {first_line}: header has {len(labels)} labels for {n} rows")
    return Network(y, labels)


def parse_network(text: str, fmt: str = "edge_list") -> Network:
    if fmt == "edge_list":
        return _parse_edge_list(text)
    if fmt == "adjacency_csv":
        return _parse_adjacency(text)
    raise ValidationError(f"unknown network format {fmt!r}; choose from {FORMATS}")


def read_network(path: PathLike, fmt: str = "edge_list") -> Network:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"network file not found: {path}")
    return parse_network(path.read_text(encoding="utf-8"), fmt)


def _csv_text(rows: Iterable[Sequence[Any]]) -> str:
    buf = _stdio.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    for row in rows:
        writer.writerow([format_float(x) if isinstance(x, (float, np.floating)) else x for x in row])
    return buf.getvalue()


def network_to_text(net: Network, fmt: str = "edge_list") -> str:
    """Text form of a network.

    The edge list contains every ordered pair, zeros included, so the node set
    and its order survive a round trip.
    """
    labels = net.labels()
    y = net.weights
    n = net.n_nodes
    if fmt == "edge_list":
        rows = [(labels[i], labels[j], int(y[i, j])) for i in range(n) for j in range(n) if i != j]
        return _csv_text(rows)
    if fmt == "adjacency_csv":
        head = [labels] if net.node_labels is not None else []
        return _csv_text(head + [[int(x) for x in row] for row in y])
    raise ValidationError(f"unknown network format {fmt!r}; choose from {FORMATS}")


def write_network(net: Network, path: PathLike, fmt: str = "edge_list") -> None:
    Path(path).write_text(network_to_text(net, fmt), encoding="utf-8", newline="\n")


def write_csv(path: PathLike, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    Path(path).write_text(_csv_text([list(header)] + [list(r) for r in rows]),
                          encoding="utf-8", newline="\n")


# --- states and ground truth ------------------------------------------------

_STATE_FIELDS = ("u_tilde", "sigma2_tilde", "v_tilde", "varphi2_tilde", "pi_tilde", "eta_tilde",
                 "rho2_tilde", "mu_tilde", "omega2_tilde", "xi_tilde", "psi_tilde", "a_tilde",
                 "b_tilde", "delta_tilde")


def state_to_dict(state: VariationalState) -> Dict[str, Any]:
    return {name: getattr(state, name) for name in _STATE_FIELDS}


def state_from_dict(data: Dict[str, Any]) -> VariationalState:
    missing = [f for f in _STATE_FIELDS if f not in data]
    if missing:
        raise ValidationError(f"state is missing fields {missing}")
    return VariationalState(**{f: np.array(data[f], dtype=np.float64) if f not in
                               ("eta_tilde", "rho2_tilde") else float(data[f])
                               for f in _STATE_FIELDS})


def truth_to_dict(truth: LatentConfig) -> Dict[str, Any]:
    """Ground truth with 1-based cluster labels."""
    return {
        "beta": truth.beta,
        "u": truth.u,
        "v": truth.v,
        "z": (truth.z + 1).tolist(),
        "mu": truth.mu,
        "tau": truth.tau,
        "gamma": truth.gamma,
        "pi": truth.pi,
    }


def truth_from_dict(data: Dict[str, Any]) -> LatentConfig:
    def arr(key):
        return None if data.get(key) is None else np.array(data[key], dtype=np.float64)
    return LatentConfig(
        beta=float(data["beta"]), u=arr("u"), v=arr("v"),
        z=np.array(data["z"], dtype=np.int64) - 1, mu=arr("mu"), tau=arr("tau"),
        gamma=arr("gamma"), pi=arr("pi"),
    )


# --- manifests ----------------------------------------------------------------

@dataclass
class RunManifest:
    """Everything needed to rerun a command and reproduce its files exactly.

    Output paths are stored relative to the output directory so that a rerun
    into a different directory produces an identical manifest.
    """

    command: str
    model: Optional[str] = None
    hyperparams: Optional[Dict[str, Any]] = None
    fit_config: Optional[Dict[str, Any]] = None
    input_path: Optional[str] = None
    input_sha256: Optional[str] = None
    seed: Optional[int] = None
    options: Dict[str, Any] = field(default_factory=dict)
    outputs: List[str] = field(default_factory=list)
    version: str = ""

    def to_dict(self) -> Dict[str, Any]:
        return {
            "command": self.command,
            "model": self.model,
            "hyperparams": self.hyperparams,
            "fit_config": self.fit_config,
            "input_path": self.input_path,
            "input_sha256": self.input_sha256,
            "seed": self.seed,
            "options": self.options,
            "outputs": list(self.outputs),
            "version": self.version,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunManifest":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"unknown manifest keys: {sorted(unknown)}")
        if "command" not in data:
            raise ValidationError("manifest needs a command")
        return cls(**data)

    def write(self, path: PathLike) -> None:
        write_json(path, self.to_dict())

    @classmethod
    def read(cls, path: PathLike) -> "RunManifest":
        return cls.from_dict(read_json(path))
