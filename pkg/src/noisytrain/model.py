"""Twin two-hidden-layer networks with classifier and projection heads.

Each network owns three parameter groups: the feature extractor (theta),
a linear classifier head (phi), and a linear projection head (psi) whose
output rows are L2-normalized.  The two networks share an architecture
but never share parameters.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass

import numpy as np

from . import kernel
from .kernel import GradientTape, Matrix, ShapeMismatchError

THETA = ("w1", "b1", "w2", "b2")
PHI = ("wc", "bc")
PSI = ("wp", "bp")
ALL_GROUPS = THETA + PHI + PSI

_CHECKPOINT_MAGIC = b"TWINNET1"


@dataclass(frozen=True)
class Arch:
    """Dimensions that fully determine every parameter shape."""

    in_dim: int
    hidden: int
    num_classes: int
    embed_dim: int

    def __post_init__(self):
        for name in ("in_dim", "hidden", "num_classes", "embed_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    def param_shapes(self) -> dict[str, tuple[int, int]]:
        return {
            "w1": (self.in_dim, self.hidden),
            "b1": (1, self.hidden),
            "w2": (self.hidden, self.hidden),
            "b2": (1, self.hidden),
            "wc": (self.hidden, self.num_classes),
            "bc": (1, self.num_classes),
            "wp": (self.hidden, self.embed_dim),
            "bp": (1, self.embed_dim),
        }


@dataclass
class NetworkParams:
    arch: Arch
    seed: int
    params: dict[str, Matrix]

    def group(self, names) -> dict[str, Matrix]:
        return {n: self.params[n] for n in names}


@dataclass
class TwinNetworks:
    net1: NetworkParams
    net2: NetworkParams


def init_network(arch: Arch, seed: int) -> NetworkParams:
    """Scaled-uniform fan-in initialization for weights; zero biases."""
    rng = np.random.default_rng([seed, 401])
    params: dict[str, Matrix] = {}
    for name, (rows, cols) in arch.param_shapes().items():
        if name.startswith("b"):
            params[name] = Matrix.zeros(rows, cols)
        else:
            bound = 1.0 / np.sqrt(rows)
            params[name] = Matrix(rng.uniform(-bound, bound, size=(rows, cols)))
    return NetworkParams(arch=arch, seed=seed, params=params)


def init_twins(arch: Arch, seed: int) -> TwinNetworks:
    return TwinNetworks(init_network(arch, seed * 2 + 1), init_network(arch, seed * 2 + 2))


def _check_input(net: NetworkParams, x: Matrix) -> None:
    if x.cols != net.arch.in_dim:
        raise ShapeMismatchError(f"input has {x.cols} columns, network expects {net.arch.in_dim}")


def forward_hidden(net: NetworkParams, x: Matrix, tape: GradientTape | None = None) -> Matrix:
    _check_input(net, x)
    p = net.params
    h1 = kernel.relu(kernel.add_row(kernel.matmul(x, p["w1"], tape), p["b1"], tape), tape)
    return kernel.relu(kernel.add_row(kernel.matmul(h1, p["w2"], tape), p["b2"], tape), tape)


def forward_logits(net: NetworkParams, x: Matrix, tape: GradientTape | None = None) -> Matrix:
    h = forward_hidden(net, x, tape)
    return kernel.add_row(kernel.matmul(h, net.params["wc"], tape), net.params["bc"], tape)


def forward_softmax(net: NetworkParams, x: Matrix) -> Matrix:
    """Class probabilities; evaluation only, never recorded on a tape."""
    return kernel.softmax_rows(forward_logits(net, x))


def forward_projection(net: NetworkParams, x: Matrix, tape: GradientTape | None = None) -> Matrix:
    """Unit-norm embedding rows from the projection head."""
    h = forward_hidden(net, x, tape)
    z = kernel.add_row(kernel.matmul(h, net.params["wp"], tape), net.params["bp"], tape)
    return kernel.l2_normalize_rows(z, tape)


def ensemble_softmax(twins: TwinNetworks, x: Matrix) -> Matrix:
    """Elementwise mean of the two networks' softmax outputs."""
    s1 = forward_softmax(twins.net1, x)
    s2 = forward_softmax(twins.net2, x)
    return Matrix((s1.data + s2.data) / 2.0)


# ---------------------------------------------------------------------------
# checkpoints: magic, version, JSON header, raw little-endian float64 blobs


def save_checkpoint(twins: TwinNetworks, path: str) -> None:
    tensors = []
    blobs = []
    for net_id, net in ((1, twins.net1), (2, twins.net2)):
        for name in ALL_GROUPS:
            m = net.params[name]
            tensors.append({"net": net_id, "name": name, "rows": m.rows, "cols": m.cols})
            blobs.append(np.ascontiguousarray(m.data, dtype="<f8").tobytes())
    header = {
        "version": 1,
        "arch": {
            "in_dim": twins.net1.arch.in_dim,
            "hidden": twins.net1.arch.hidden,
            "num_classes": twins.net1.arch.num_classes,
            "embed_dim": twins.net1.arch.embed_dim,
        },
        "seeds": [twins.net1.seed, twins.net2.seed],
        "tensors": tensors,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(_CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(header_bytes)))
        f.write(header_bytes)
        for blob in blobs:
            f.write(blob)
    os.replace(tmp, path)


def load_checkpoint(path: str) -> TwinNetworks:
    with open(path, "rb") as f:
        magic = f.read(len(_CHECKPOINT_MAGIC))
        if magic != _CHECKPOINT_MAGIC:
            raise ValueError(f"{path} is not a twin-network checkpoint")
        (header_len,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(header_len).decode("utf-8"))
        if header["version"] != 1:
            raise ValueError(f"unsupported checkpoint version {header['version']}")
        arch = Arch(**header["arch"])
        nets = {}
        for net_id, seed in zip((1, 2), header["seeds"]):
            nets[net_id] = NetworkParams(arch=arch, seed=seed, params={})
        for t in header["tensors"]:
            n = t["rows"] * t["cols"]
            buf = f.read(8 * n)
            arr = np.frombuffer(buf, dtype="<f8").reshape(t["rows"], t["cols"]).copy()
            nets[t["net"]].params[t["name"]] = Matrix(arr)
    for net in nets.values():
        missing = set(ALL_GROUPS) - set(net.params)
        if missing:
            raise ValueError(f"checkpoint missing tensors: {sorted(missing)}")
    return TwinNetworks(nets[1], nets[2])
