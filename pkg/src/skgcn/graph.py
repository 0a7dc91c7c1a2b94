"""Joint-graph topologies and the adjacency-matrix family used by the models.

Five variants are supported: the physical bone structure with self-loops
("skeleton"), its off-diagonal neighbor part alone ("sk-neighbor"), the bare
identity, and identity/skeleton bases with a freely learned residual matrix
added on top. A spatial matrix can further be expanded into an
(N*tau, N*tau) block matrix over a window of tau frames, with the spatial
matrix on the diagonal blocks and a temporal matrix on off-diagonal blocks.

Normalization is symmetric degree normalization by default,
``D^-1/2 A D^-1/2`` with degrees taken over absolute values (residual
entries may be negative); a row-stochastic ``D^-1 A`` mode is available for
comparison. Zero-degree rows are left all-zero rather than divided.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .errors import ParseError, ShapeError
from .tensor import Tensor, from_op

RESIDUAL_INIT_SCALE = 1e-4


class AdjacencyVariant(str, enum.Enum):
    SKELETON = "skeleton"
    IDENTITY = "identity"
    SK_NEIGHBOR = "sk-neighbor"
    IDENTITY_PLUS_RESIDUAL = "identity+res"
    SKELETON_PLUS_RESIDUAL = "skeleton+res"
    ST_BLOCK = "st-block"


RESIDUAL_VARIANTS = frozenset(
    {AdjacencyVariant.IDENTITY_PLUS_RESIDUAL, AdjacencyVariant.SKELETON_PLUS_RESIDUAL}
)

# Variants whose matrix never depends on the joint-graph edges.
EDGE_FREE_VARIANTS = frozenset(
    {AdjacencyVariant.IDENTITY, AdjacencyVariant.IDENTITY_PLUS_RESIDUAL}
)


class NoiseKind(str, enum.Enum):
    WRONG_EDGES = "wrong-edges"
    SHUFFLE_JOINTS = "shuffle"
    DROP_JOINTS = "drop"


@dataclass(frozen=True)
class NoiseSpec:
    """One noise-injection request: what kind, how much, which RNG stream."""

    kind: NoiseKind
    count: int
    seed: int

    def __post_init__(self):
        if self.count < 0:
            raise ValueError(f"noise count must be non-negative, got {self.count}")


@dataclass(frozen=True)
class JointGraphTopology:
    """An undirected joint graph: node count plus unordered edge pairs.

    Self-loops are not part of a topology; variants that want them add the
    identity during adjacency construction.
    """

    n_joints: int
    edges: tuple[tuple[int, int], ...]
    name: str = ""

    def __post_init__(self):
        if self.n_joints < 1:
            raise ValueError(f"n_joints must be positive, got {self.n_joints}")
        canon = []
        seen = set()
        for i, j in self.edges:
            i, j = int(i), int(j)
            if not (0 <= i < self.n_joints and 0 <= j < self.n_joints):
                raise ValueError(f"edge ({i},{j}) out of range for {self.n_joints} joints")
            if i == j:
                raise ValueError(f"self-loop edge ({i},{j}) not allowed in a topology")
            pair = (min(i, j), max(i, j))
            if pair in seen:
                raise ValueError(f"duplicate edge {pair}")
            seen.add(pair)
            canon.append(pair)
        object.__setattr__(self, "edges", tuple(canon))

    def neighbor_matrix(self) -> np.ndarray:
        """Symmetric binary matrix of the topology's edges, no self-loops."""
        m = np.zeros((self.n_joints, self.n_joints))
        for i, j in self.edges:
            m[i, j] = m[j, i] = 1.0
        return m

    def absent_pairs(self) -> list[tuple[int, int]]:
        """All non-self pairs (i<j) not present as edges, in lexicographic order."""
        present = set(self.edges)
        return [
            (i, j)
            for i in range(self.n_joints)
            for j in range(i + 1, self.n_joints)
            if (i, j) not in present
        ]


def save_topology(topology: JointGraphTopology, path) -> None:
    lines = [f"joints {topology.n_joints}"]
    lines += [f"edge {i} {j}" for i, j in topology.edges]
    Path(path).write_text("\n".join(lines) + "\n")


def load_topology(path) -> JointGraphTopology:
    """Parse a topology file: `joints <N>` then `edge <i> <j>` lines."""
    path = Path(path)
    n_joints = None
    edges = []
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if parts[0] == "joints":
            if n_joints is not None:
                raise ParseError(path, lineno, "duplicate 'joints' line")
            if len(parts) != 2 or not parts[1].isdigit():
                raise ParseError(path, lineno, f"malformed joints line: {line!r}")
            n_joints = int(parts[1])
        elif parts[0] == "edge":
            if n_joints is None:
                raise ParseError(path, lineno, "'edge' before 'joints' line")
            if len(parts) != 3:
                raise ParseError(path, lineno, f"malformed edge line: {line!r}")
            try:
                edges.append((int(parts[1]), int(parts[2])))
            except ValueError:
                raise ParseError(path, lineno, f"non-integer edge indices: {line!r}") from None
        else:
            raise ParseError(path, lineno, f"unknown directive {parts[0]!r}")
    if n_joints is None:
        raise ParseError(path, 1, "missing 'joints' line")
    try:
        return JointGraphTopology(n_joints, tuple(edges), name=path.stem)
    except ValueError as exc:
        raise ParseError(path, 1, str(exc)) from None


@dataclass
class AdjacencyMatrix:
    """A spatial (or spatial-temporal block) adjacency with its variant tag.

    For residual variants, ``values`` is recomputed from the fixed base plus
    the current residual every time it is read, so it tracks training.
    """

    variant: AdjacencyVariant
    base: np.ndarray
    residual: Tensor | None = None
    source: str = field(default="", compare=False)

    def __post_init__(self):
        self.base = np.asarray(self.base, dtype=float)
        if self.base.ndim != 2 or self.base.shape[0] != self.base.shape[1]:
            raise ShapeError(f"adjacency must be square, got {self.base.shape}")
        self.base.setflags(write=False)
        if self.residual is not None and self.residual.shape != self.base.shape:
            raise ShapeError(
                f"residual shape {self.residual.shape} != adjacency shape {self.base.shape}"
            )

    @property
    def size(self) -> int:
        return self.base.shape[0]

    @property
    def values(self) -> np.ndarray:
        if self.residual is None:
            return self.base
        return self.base + self.residual.data

    def values_tensor(self) -> Tensor:
        """Current values as a (possibly gradient-tracking) tensor."""
        if self.residual is None:
            return Tensor(self.base.copy())
        return T.add(Tensor(self.base.copy()), self.residual)


def build_adjacency(
    topology: JointGraphTopology,
    variant: AdjacencyVariant | str,
    residual_init: np.ndarray | None = None,
) -> AdjacencyMatrix:
    """Construct one of the five spatial adjacency variants for a topology.

    ``residual_init`` seeds the learnable residual and is only accepted for
    residual variants; it defaults to zeros. Models typically pass values
    drawn by :func:`default_residual_init`.
    """
    variant = AdjacencyVariant(variant)
    n = topology.n_joints
    eye = np.eye(n)
    if variant is AdjacencyVariant.ST_BLOCK:
        raise ValueError("st-block matrices are assembled by build_st_block_adjacency")
    if variant in RESIDUAL_VARIANTS:
        if residual_init is None:
            residual_init = np.zeros((n, n))
        residual_init = np.asarray(residual_init, dtype=float)
        if residual_init.shape != (n, n):
            raise ShapeError(f"residual_init shape {residual_init.shape} != ({n}, {n})")
        residual = Tensor(residual_init.copy(), requires_grad=True)
        if variant is AdjacencyVariant.IDENTITY_PLUS_RESIDUAL:
            base = eye
        else:
            base = eye + topology.neighbor_matrix()
        return AdjacencyMatrix(variant, base, residual, source=topology.name)
    if residual_init is not None:
        raise ValueError(f"residual_init given for non-residual variant {variant.value}")
    if variant is AdjacencyVariant.IDENTITY:
        base = eye
    elif variant is AdjacencyVariant.SK_NEIGHBOR:
        base = topology.neighbor_matrix()
    else:  # SKELETON
        base = eye + topology.neighbor_matrix()
    return AdjacencyMatrix(variant, base, source=topology.name)


def default_residual_init(n: int, rng: np.random.Generator) -> np.ndarray:
    # Near-zero start: early training is dominated by the fixed base.
    return rng.uniform(-RESIDUAL_INIT_SCALE, RESIDUAL_INIT_SCALE, size=(n, n))


def normalize_values(values: np.ndarray, mode: str = "symmetric") -> np.ndarray:
    """Degree-normalize a square matrix; zero-degree rows stay all-zero.

    Degrees are absolute row sums so they remain positive for matrices with
    negative entries. ``symmetric`` gives ``D^-1/2 A D^-1/2``; ``row`` gives
    ``D^-1 A``.
    """
    values = np.asarray(values, dtype=float)
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        raise ShapeError(f"expected a square matrix, got {values.shape}")
    deg = np.abs(values).sum(axis=1)
    pos = deg > 0
    if mode == "symmetric":
        d = np.zeros_like(deg)
        np.power(deg, -0.5, out=d, where=pos)
        return values * np.outer(d, d)
    if mode == "row":
        d = np.zeros_like(deg)
        np.divide(1.0, deg, out=d, where=pos)
        return values * d[:, None]
    raise ValueError(f"unknown normalization mode {mode!r}")


def normalize(adj: "AdjacencyMatrix | np.ndarray", mode: str = "symmetric") -> np.ndarray:
    """Normalized snapshot of an adjacency's current values."""
    values = adj.values if isinstance(adj, AdjacencyMatrix) else adj
    return normalize_values(values, mode=mode)


def _guarded_rsqrt(t: Tensor) -> Tensor:
    x = t.data
    pos = x > 0
    y = np.zeros_like(x)
    np.power(x, -0.5, out=y, where=pos)

    def backward_fn(g):
        return (g * (-0.5) * y**3,)  # y^3 == x^-3/2 where guarded, else 0

    return from_op(y, (t,), backward_fn)


def _guarded_reciprocal(t: Tensor) -> Tensor:
    x = t.data
    pos = x > 0
    y = np.zeros_like(x)
    np.divide(1.0, x, out=y, where=pos)

    def backward_fn(g):
        return (g * -(y**2),)

    return from_op(y, (t,), backward_fn)


def normalize_tensor(a: Tensor, mode: str = "symmetric") -> Tensor:
    """Differentiable counterpart of :func:`normalize_values`.

    Used in the forward pass for adjacency variants with a learnable
    residual, which are re-normalized from their current values every pass.
    """
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"expected a square matrix tensor, got {a.shape}")
    n = a.shape[0]
    deg = T.reduce_sum(T.abs_(a), axes=(1,))
    if mode == "symmetric":
        d = _guarded_rsqrt(deg)
        outer = T.matmul(T.reshape(d, (n, 1)), T.reshape(d, (1, n)))
        return T.mul(a, outer)
    if mode == "row":
        d = _guarded_reciprocal(deg)
        cols = T.matmul(T.reshape(d, (n, 1)), Tensor(np.ones((1, n))))
        return T.mul(a, cols)
    raise ValueError(f"unknown normalization mode {mode!r}")


def _temporal_mask(tau: int, scope: str) -> np.ndarray:
    if scope == "all":
        return np.ones((tau, tau)) - np.eye(tau)
    if scope == "adjacent":
        m = np.zeros((tau, tau))
        for w in range(tau - 1):
            m[w, w + 1] = m[w + 1, w] = 1.0
        return m
    raise ValueError(f"unknown temporal scope {scope!r}")


def build_st_block_adjacency(
    a_spatial: "AdjacencyMatrix | np.ndarray",
    a_temporal: "AdjacencyMatrix | np.ndarray",
    tau: int,
    temporal_scope: str = "all",
) -> AdjacencyMatrix:
    """Assemble the (N*tau, N*tau) block matrix for a tau-frame window.

    The spatial matrix fills the tau diagonal blocks; the temporal matrix
    fills off-diagonal blocks -- every frame pair by default, or only
    adjacent frames with ``temporal_scope="adjacent"``.
    """
    if tau < 1:
        raise ValueError(f"tau must be >= 1, got {tau}")
    vs = a_spatial.values if isinstance(a_spatial, AdjacencyMatrix) else np.asarray(a_spatial, float)
    vt = a_temporal.values if isinstance(a_temporal, AdjacencyMatrix) else np.asarray(a_temporal, float)
    if vs.shape != vt.shape or vs.ndim != 2 or vs.shape[0] != vs.shape[1]:
        raise ShapeError(f"spatial/temporal blocks must be square and equal: {vs.shape} vs {vt.shape}")
    block = np.kron(np.eye(tau), vs) + np.kron(_temporal_mask(tau, temporal_scope), vt)
    return AdjacencyMatrix(AdjacencyVariant.ST_BLOCK, block)


def st_block_tensor(
    a_spatial: Tensor, a_temporal: np.ndarray, tau: int, temporal_scope: str = "all"
) -> Tensor:
    """Differentiable block assembly for a learnable spatial matrix.

    Only the spatial matrix carries gradient; its gradient is the sum over
    the tau diagonal blocks of the output gradient.
    """
    if tau < 1:
        raise ValueError(f"tau must be >= 1, got {tau}")
    n = a_spatial.shape[0]
    data = np.kron(np.eye(tau), a_spatial.data) + np.kron(
        _temporal_mask(tau, temporal_scope), np.asarray(a_temporal, float)
    )

    def backward_fn(g):
        gs = np.zeros((n, n))
        for w in range(tau):
            gs += g[w * n : (w + 1) * n, w * n : (w + 1) * n]
        return (gs,)

    return from_op(data, (a_spatial,), backward_fn)


def add_wrong_edges(topology: JointGraphTopology, spec: NoiseSpec) -> JointGraphTopology:
    """Add ``spec.count`` uniformly sampled absent edges to a topology."""
    if spec.kind is not NoiseKind.WRONG_EDGES:
        raise ValueError(f"expected wrong-edges noise, got {spec.kind.value}")
    absent = topology.absent_pairs()
    if spec.count > len(absent):
        raise ValueError(
            f"cannot add {spec.count} edges: only {len(absent)} absent pairs exist"
        )
    if spec.count == 0:
        return topology
    rng = np.random.default_rng(spec.seed)
    picks = rng.choice(len(absent), size=spec.count, replace=False)
    new_edges = topology.edges + tuple(absent[i] for i in picks)
    return JointGraphTopology(topology.n_joints, new_edges, name=topology.name)


def top_k_edges(residual: np.ndarray, k: int) -> list[tuple[int, int, float]]:
    """The k entries of largest absolute value, self-loops included.

    Sorted by descending |value|; ties broken by (row, col) ascending.
    """
    residual = np.asarray(residual, dtype=float)
    if residual.ndim != 2:
        raise ShapeError(f"expected a matrix, got shape {residual.shape}")
    if not 0 <= k <= residual.size:
        raise ValueError(f"k={k} out of range for {residual.size} entries")
    cells = sorted(
        ((i, j) for i in range(residual.shape[0]) for j in range(residual.shape[1])),
        key=lambda ij: (-abs(residual[ij]), ij),
    )
    return [(i, j, float(residual[i, j])) for i, j in cells[:k]]
