"""The validation classifier: three graph-convolution layers with pluggable
adjacency, interleaved temporal convolutions and stride-2 temporal pooling,
spatial-temporal mean pooling, and a fully-connected head.

Each graph convolution computes sigma(Abar @ X_t @ W) per frame with one
weight matrix shared across frames. Fixed adjacency variants are normalized
once at construction; variants with a learnable residual are re-normalized
inside every forward pass so gradients flow through the normalization.
With tau >= 2 every GCN layer operates on non-overlapping tau-frame windows
against an (N*tau, N*tau) block adjacency; leftover frames are dropped.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .errors import ParseError, ShapeError
from .graph import (
    AdjacencyMatrix,
    AdjacencyVariant,
    JointGraphTopology,
    RESIDUAL_VARIANTS,
    build_adjacency,
    build_st_block_adjacency,
    default_residual_init,
    normalize_values,
    normalize_tensor,
    st_block_tensor,
)
from .tensor import Tensor

CHECKPOINT_MAGIC = "skckpt v1"
N_GCN_LAYERS = 3

_ACTIVATIONS = {"relu": T.relu, "identity": lambda t: t}


@dataclass(frozen=True)
class ModelConfig:
    n_joints: int
    in_channels: int
    class_count: int
    gcn_channels: tuple[int, int, int] = (64, 64, 128)
    adjacency: tuple[str, str, str] = ("identity+res",) * N_GCN_LAYERS
    tau: int = 1
    temporal_kernel: int = 5
    activation: str = "relu"
    normalization: str = "symmetric"
    temporal_adjacency: str = "identity"
    temporal_scope: str = "all"

    def __post_init__(self):
        if isinstance(self.adjacency, str):
            object.__setattr__(self, "adjacency", (self.adjacency,) * N_GCN_LAYERS)
        object.__setattr__(self, "adjacency", tuple(AdjacencyVariant(v).value for v in self.adjacency))
        object.__setattr__(self, "gcn_channels", tuple(int(c) for c in self.gcn_channels))
        if len(self.gcn_channels) != N_GCN_LAYERS:
            raise ValueError(f"need {N_GCN_LAYERS} gcn channel widths, got {self.gcn_channels}")
        if len(self.adjacency) != N_GCN_LAYERS:
            raise ValueError(f"need {N_GCN_LAYERS} adjacency variants, got {self.adjacency}")
        if AdjacencyVariant.ST_BLOCK.value in self.adjacency:
            raise ValueError("per-layer variants must be spatial; blocks are built from tau")
        if self.tau < 1:
            raise ValueError(f"tau must be >= 1, got {self.tau}")
        if self.temporal_kernel < 1 or self.temporal_kernel % 2 == 0:
            raise ValueError(f"temporal_kernel must be odd, got {self.temporal_kernel}")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if AdjacencyVariant(self.temporal_adjacency) in RESIDUAL_VARIANTS:
            raise ValueError("temporal adjacency cannot carry a residual")
        if self.n_joints < 1 or self.in_channels < 1 or self.class_count < 2:
            raise ValueError("need n_joints >= 1, in_channels >= 1, class_count >= 2")

    def layer_variants(self) -> tuple[AdjacencyVariant, ...]:
        return tuple(AdjacencyVariant(v) for v in self.adjacency)


def gcn_layer_forward(x: Tensor, abar, weight: Tensor, activation: str = "relu") -> Tensor:
    """sigma(Abar @ X_t @ W) for every frame t of x (T, M, C_in).

    `abar` must already be normalized; it may be a Tensor (gradient-tracking),
    a plain matrix, or an AdjacencyMatrix whose values are normalized.
    """
    if not isinstance(abar, Tensor):
        values = abar.values if isinstance(abar, AdjacencyMatrix) else abar
        abar = Tensor(np.asarray(values, dtype=float))
    if x.ndim != 3:
        raise ShapeError(f"expected (T, M, C) input, got shape {x.shape}")
    if abar.ndim != 2 or abar.shape[0] != abar.shape[1] or abar.shape[0] != x.shape[1]:
        raise ShapeError(f"adjacency {abar.shape} does not match {x.shape[1]} graph nodes")
    if weight.ndim != 2 or weight.shape[0] != x.shape[2]:
        raise ShapeError(f"weight {weight.shape} does not match {x.shape[2]} input channels")
    h = T.matmul(abar, x)  # (M, M) @ (T, M, C) -> (T, M, C)
    return _ACTIVATIONS[activation](T.matmul(h, weight))


def classify_pool(x: Tensor) -> Tensor:
    """Mean over frames and joints: (T, N, C) -> (C,). Feeds the FC head."""
    if x.ndim != 3:
        raise ShapeError(f"expected (T, N, C) input, got shape {x.shape}")
    return T.reduce_mean(x, axes=(0, 1))


def _glorot(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    fan_in = int(np.prod(shape[:-1]))
    fan_out = int(shape[-1])
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


@dataclass
class GcnClassifier:
    cfg: ModelConfig
    topology: JointGraphTopology
    params: dict[str, Tensor]
    adjacencies: list[AdjacencyMatrix]
    # Pre-normalized block matrix per layer for variants without a residual.
    abar_static: list[np.ndarray | None] = field(default_factory=list)
    temporal_base: np.ndarray | None = None

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def forward(self, x: Tensor) -> Tensor:
        """Logits (class_count,) for one featurized sequence (T, N, C)."""
        cfg = self.cfg
        if x.ndim != 3 or x.shape[1] != cfg.n_joints or x.shape[2] != cfg.in_channels:
            raise ShapeError(
                f"input: expected (T, {cfg.n_joints}, {cfg.in_channels}), got {x.shape}"
            )
        for i in range(N_GCN_LAYERS):
            x = self._gcn_stage(x, i)
            if i < N_GCN_LAYERS - 1:
                x = self._temporal_stage(x, i)
        pooled = classify_pool(x)
        w, b = self.params["fc.weight"], self.params["fc.bias"]
        logits = T.matmul(T.reshape(pooled, (1, w.shape[0])), w)
        return T.add(T.reshape(logits, (w.shape[1],)), b)

    def _layer_abar(self, i: int) -> Tensor:
        adj = self.adjacencies[i]
        if adj.residual is None:
            return Tensor(self.abar_static[i])
        values = adj.values_tensor()
        if self.cfg.tau > 1:
            values = st_block_tensor(
                values, self.temporal_base, self.cfg.tau, self.cfg.temporal_scope
            )
        return normalize_tensor(values, mode=self.cfg.normalization)

    def _gcn_stage(self, x: Tensor, i: int) -> Tensor:
        stage = f"gcn{i + 1}"
        tau, n = self.cfg.tau, self.cfg.n_joints
        weight = self.params[f"{stage}.weight"]
        if tau == 1:
            return gcn_layer_forward(x, self._layer_abar(i), weight, self.cfg.activation)
        n_windows = x.shape[0] // tau
        if n_windows < 1:
            raise ShapeError(f"{stage}: needs at least tau={tau} frames, got {x.shape[0]}")
        if x.shape[0] != n_windows * tau:
            x = T.slice_axis(x, 0, 0, n_windows * tau)
        windows = T.reshape(x, (n_windows, tau * n, x.shape[2]))
        out = gcn_layer_forward(windows, self._layer_abar(i), weight, self.cfg.activation)
        return T.reshape(out, (n_windows * tau, n, weight.shape[1]))

    def _temporal_stage(self, x: Tensor, i: int) -> Tensor:
        stage = f"tconv{i + 1}"
        w = self.params[f"{stage}.weight"]
        if x.shape[2] != w.shape[1]:
            raise ShapeError(f"{stage}: weight {w.shape} does not match {x.shape[2]} channels")
        x = T.temporal_conv(x, w)
        half = x.shape[0] // 2
        if half < 1:
            raise ShapeError(f"{stage}: stride-2 pooling needs >= 2 frames, got {x.shape[0]}")
        if x.shape[0] != 2 * half:
            x = T.slice_axis(x, 0, 0, 2 * half)
        x = T.reshape(x, (half, 2, x.shape[1], x.shape[2]))
        return T.reduce_mean(x, axes=(1,))


def _build(cfg: ModelConfig, topology: JointGraphTopology, rng, values=None) -> GcnClassifier:
    if topology.n_joints != cfg.n_joints:
        raise ShapeError(f"topology has {topology.n_joints} joints, config expects {cfg.n_joints}")

    def take(name, shape):
        if values is None:
            return Tensor(_glorot(rng, shape), requires_grad=True)
        if name not in values:
            raise ValueError(f"checkpoint is missing tensor {name!r}")
        arr = np.asarray(values[name], dtype=float)
        if arr.shape != shape:
            raise ShapeError(f"{name}: stored shape {arr.shape}, expected {shape}")
        return Tensor(arr.copy(), requires_grad=True)

    n, k = cfg.n_joints, cfg.temporal_kernel
    widths = (cfg.in_channels, *cfg.gcn_channels)
    params: dict[str, Tensor] = {}
    adjacencies: list[AdjacencyMatrix] = []
    for i, variant in enumerate(cfg.layer_variants()):
        name = f"gcn{i + 1}"
        params[f"{name}.weight"] = take(f"{name}.weight", (widths[i], widths[i + 1]))
        if variant in RESIDUAL_VARIANTS:
            if values is None:
                init = default_residual_init(n, rng)
                adj = build_adjacency(topology, variant, residual_init=init)
            else:
                adj = build_adjacency(topology, variant)
                adj.residual.data[...] = take(f"{name}.residual", (n, n)).data
            params[f"{name}.residual"] = adj.residual
        else:
            adj = build_adjacency(topology, variant)
        adjacencies.append(adj)
        if i < N_GCN_LAYERS - 1:
            params[f"tconv{i + 1}.weight"] = take(
                f"tconv{i + 1}.weight", (k, widths[i + 1], widths[i + 1])
            )
    params["fc.weight"] = take("fc.weight", (cfg.gcn_channels[-1], cfg.class_count))
    if values is None:
        params["fc.bias"] = Tensor(np.zeros(cfg.class_count), requires_grad=True)
    else:
        params["fc.bias"] = take("fc.bias", (cfg.class_count,))
    if values is not None and set(values) - set(params):
        raise ValueError(f"checkpoint has unexpected tensors: {sorted(set(values) - set(params))}")

    temporal_base = None
    if cfg.tau > 1:
        temporal_base = build_adjacency(topology, cfg.temporal_adjacency).values
    abar_static: list[np.ndarray | None] = []
    for adj in adjacencies:
        if adj.residual is not None:
            abar_static.append(None)
            continue
        block = adj.values
        if cfg.tau > 1:
            block = build_st_block_adjacency(
                block, temporal_base, cfg.tau, cfg.temporal_scope
            ).values
        abar_static.append(normalize_values(block, mode=cfg.normalization))
    return GcnClassifier(cfg, topology, params, adjacencies, abar_static, temporal_base)


def init_model(cfg: ModelConfig, topology: JointGraphTopology, seed: int) -> GcnClassifier:
    """Fresh model with a deterministic parameter draw. Parameter creation
    order is fixed, so a given seed always yields the same model."""
    return _build(cfg, topology, np.random.default_rng([seed, 0x6D6F64]))


# ---------------------------------------------------------------------------
# Checkpoints


@dataclass
class Checkpoint:
    cfg: ModelConfig
    topology: JointGraphTopology
    params: dict[str, np.ndarray]
    adam_m: dict[str, np.ndarray]
    adam_v: dict[str, np.ndarray]
    adam_t: int = 0
    epoch: int = 0

    def content_equal(self, other: "Checkpoint") -> bool:
        if (self.cfg, self.topology, self.adam_t, self.epoch) != (
            other.cfg,
            other.topology,
            other.adam_t,
            other.epoch,
        ):
            return False
        for mine, theirs in ((self.params, other.params), (self.adam_m, other.adam_m), (self.adam_v, other.adam_v)):
            if list(mine) != list(theirs):
                return False
            if not all(np.array_equal(mine[k], theirs[k]) for k in mine):
                return False
        return True


def snapshot(model: GcnClassifier, adam_m=None, adam_v=None, adam_t: int = 0, epoch: int = 0) -> Checkpoint:
    params = {k: v.data.copy() for k, v in model.params.items()}
    zeros = lambda: {k: np.zeros_like(v.data) for k, v in model.params.items()}
    m = {k: v.copy() for k, v in adam_m.items()} if adam_m is not None else zeros()
    v = {k: x.copy() for k, x in adam_v.items()} if adam_v is not None else zeros()
    return Checkpoint(model.cfg, model.topology, params, m, v, adam_t, epoch)


def from_checkpoint(ck: Checkpoint) -> GcnClassifier:
    return _build(ck.cfg, ck.topology, rng=None, values=ck.params)


_CONFIG_FIELDS = (
    "n_joints",
    "in_channels",
    "class_count",
    "gcn_channels",
    "adjacency",
    "tau",
    "temporal_kernel",
    "activation",
    "normalization",
    "temporal_adjacency",
    "temporal_scope",
)


def _config_lines(cfg: ModelConfig) -> list[str]:
    out = []
    for name in _CONFIG_FIELDS:
        value = getattr(cfg, name)
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        out.append(f"config {name} {value}")
    return out


def _hex_line(arr: np.ndarray) -> str:
    return " ".join(float(v).hex() for v in arr.ravel())


def _tensor_lines(prefix: str, name: str, arr: np.ndarray) -> list[str]:
    dims = " ".join(str(d) for d in arr.shape)
    return [f"{prefix} {name} {arr.ndim} {dims}".rstrip(), _hex_line(arr)]


def save_checkpoint(ck: Checkpoint, path) -> None:
    """Text checkpoint: config, topology, then each tensor as shape header plus
    one line of hex floats. Hex floats make the round-trip bit-exact."""
    lines = [CHECKPOINT_MAGIC, f"epoch {ck.epoch}", f"adam_t {ck.adam_t}"]
    lines += _config_lines(ck.cfg)
    lines.append(f"topology joints {ck.topology.n_joints}")
    if ck.topology.name:
        lines.append(f"topology name {ck.topology.name}")
    edges = ",".join(f"{i}-{j}" for i, j in ck.topology.edges)
    lines.append(f"topology edges {edges or '-'}")
    for name, arr in ck.params.items():
        lines += _tensor_lines("tensor", name, arr)
    for tag, table in (("m", ck.adam_m), ("v", ck.adam_v)):
        for name, arr in table.items():
            lines += _tensor_lines(f"state {tag}", name, arr)
    Path(path).write_text("\n".join(lines) + "\n")


def _parse_tensor(path, lineno, parts, value_line):
    name = parts[0]
    try:
        ndim = int(parts[1])
        shape = tuple(int(d) for d in parts[2 : 2 + ndim])
    except (IndexError, ValueError):
        raise ParseError(path, lineno, f"malformed tensor header: {' '.join(parts)}") from None
    try:
        flat = [float.fromhex(tok) for tok in value_line.split()]
    except ValueError:
        raise ParseError(path, lineno + 1, "malformed hex float") from None
    expected = int(np.prod(shape)) if shape else 1
    if len(flat) != expected:
        raise ParseError(path, lineno + 1, f"{name}: expected {expected} values, got {len(flat)}")
    return name, np.array(flat).reshape(shape)


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    raw_lines = path.read_text().splitlines()
    lines = [(i + 1, l.strip()) for i, l in enumerate(raw_lines) if l.strip() and not l.strip().startswith("#")]
    if not lines or lines[0][1] != CHECKPOINT_MAGIC:
        raise ParseError(path, 1, f"expected {CHECKPOINT_MAGIC!r} header")
    scalars: dict[str, str] = {}
    config: dict[str, str] = {}
    topo: dict[str, str] = {}
    tensors: dict[str, np.ndarray] = {}
    state: dict[str, dict[str, np.ndarray]] = {"m": {}, "v": {}}
    i = 1
    while i < len(lines):
        lineno, line = lines[i]
        parts = line.split()
        if parts[0] in ("epoch", "adam_t") and len(parts) == 2:
            scalars[parts[0]] = parts[1]
        elif parts[0] == "config" and len(parts) >= 3:
            config[parts[1]] = line.split(maxsplit=2)[2]
        elif parts[0] == "topology" and len(parts) >= 2:
            topo[parts[1]] = line.split(maxsplit=2)[2] if len(parts) >= 3 else ""
        elif parts[0] == "tensor":
            if i + 1 >= len(lines):
                raise ParseError(path, lineno, "tensor header without values")
            name, arr = _parse_tensor(path, lineno, parts[1:], lines[i + 1][1])
            tensors[name] = arr
            i += 1
        elif parts[0] == "state" and len(parts) >= 3 and parts[1] in state:
            if i + 1 >= len(lines):
                raise ParseError(path, lineno, "state header without values")
            name, arr = _parse_tensor(path, lineno, parts[2:], lines[i + 1][1])
            state[parts[1]][name] = arr
            i += 1
        else:
            raise ParseError(path, lineno, f"unknown checkpoint line: {line!r}")
        i += 1
    for key in ("epoch", "adam_t"):
        if key not in scalars:
            raise ParseError(path, 1, f"missing {key!r} line")
    missing = [f for f in _CONFIG_FIELDS if f not in config]
    if missing:
        raise ParseError(path, 1, f"missing config fields: {missing}")
    cfg = ModelConfig(
        n_joints=int(config["n_joints"]),
        in_channels=int(config["in_channels"]),
        class_count=int(config["class_count"]),
        gcn_channels=tuple(int(c) for c in config["gcn_channels"].split(",")),
        adjacency=tuple(config["adjacency"].split(",")),
        tau=int(config["tau"]),
        temporal_kernel=int(config["temporal_kernel"]),
        activation=config["activation"],
        normalization=config["normalization"],
        temporal_adjacency=config["temporal_adjacency"],
        temporal_scope=config["temporal_scope"],
    )
    if "joints" not in topo or "edges" not in topo:
        raise ParseError(path, 1, "missing topology lines")
    edges = tuple()
    if topo["edges"] != "-":
        try:
            edges = tuple(tuple(int(x) for x in pair.split("-")) for pair in topo["edges"].split(","))
        except ValueError:
            raise ParseError(path, 1, f"malformed topology edges: {topo['edges']!r}") from None
    topology = JointGraphTopology(int(topo["joints"]), edges, name=topo.get("name", ""))
    return Checkpoint(
        cfg, topology, tensors, state["m"], state["v"], int(scalars["adam_t"]), int(scalars["epoch"])
    )
