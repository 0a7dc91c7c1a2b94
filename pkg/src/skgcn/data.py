"""Skeleton sequences and datasets: file formats, preprocessing, synthesis.

A sequence is a (T, N, C_in) coordinate array with a class label; a dataset
is a manifest tying a topology to train/test sequence files. Preprocessing
resamples to a fixed frame count and optionally appends per-joint velocity
channels. The synthetic generator builds a desk-scale classification task
where each class moves a small, class-specific subset of joints, and two
noise injectors corrupt sequences at the joint level (shuffling identities,
zeroing coordinates). Topology-level noise lives in the graph module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParseError, ShapeError
from .graph import JointGraphTopology, NoiseKind, NoiseSpec, save_topology, load_topology
from .tensor import Tensor

SEQUENCE_MAGIC = "skseq v1"
MANIFEST_MAGIC = "skmanifest v1"
SPLITS = ("train", "test")


@dataclass
class SkeletonSequence:
    """T frames of N joints with C_in coordinate channels plus a label."""

    coords: np.ndarray
    label: int
    sample_id: str = ""

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=float)
        if self.coords.ndim != 3:
            raise ShapeError(f"coords must be (T, N, C), got shape {self.coords.shape}")
        t, n, c = self.coords.shape
        if t < 1 or n < 1:
            raise ShapeError(f"need at least one frame and one joint, got {self.coords.shape}")
        if c not in (2, 3):
            raise ValueError(f"coordinate channels must be 2 or 3, got {c}")
        if not np.all(np.isfinite(self.coords)):
            raise ValueError(f"non-finite coordinates in sequence {self.sample_id!r}")
        if self.label < 0:
            raise ValueError(f"label must be non-negative, got {self.label}")

    @property
    def n_frames(self) -> int:
        return self.coords.shape[0]

    @property
    def n_joints(self) -> int:
        return self.coords.shape[1]

    @property
    def n_channels(self) -> int:
        return self.coords.shape[2]


def save_sequence(seq: SkeletonSequence, path) -> None:
    """Write the text form of a sequence; floats use repr for exact round-trips."""
    lines = [
        SEQUENCE_MAGIC,
        f"frames {seq.n_frames}",
        f"joints {seq.n_joints}",
        f"channels {seq.n_channels}",
        f"label {seq.label}",
        f"id {seq.sample_id}".rstrip(),
    ]
    for t in range(seq.n_frames):
        lines.append(f"# frame {t}")
        for n in range(seq.n_joints):
            lines.append(" ".join(repr(float(v)) for v in seq.coords[t, n]))
    Path(path).write_text("\n".join(lines) + "\n")


def load_sequence(path) -> SkeletonSequence:
    path = Path(path)
    header: dict[str, str] = {}
    rows: list[tuple[int, list[str]]] = []
    saw_magic = False
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if not saw_magic:
            if line != SEQUENCE_MAGIC:
                raise ParseError(path, lineno, f"expected {SEQUENCE_MAGIC!r} header, got {line!r}")
            saw_magic = True
            continue
        key = line.split(maxsplit=1)[0]
        if key in ("frames", "joints", "channels", "label", "id") and key not in header:
            parts = line.split(maxsplit=1)
            header[key] = parts[1] if len(parts) == 2 else ""
            continue
        rows.append((lineno, line.split()))
    if not saw_magic:
        raise ParseError(path, 1, f"missing {SEQUENCE_MAGIC!r} header")
    for key in ("frames", "joints", "channels", "label"):
        if key not in header:
            raise ParseError(path, 1, f"missing {key!r} header line")
        if not header[key].lstrip("-").isdigit():
            raise ParseError(path, 1, f"non-integer {key!r} value {header[key]!r}")
    t, n, c = int(header["frames"]), int(header["joints"]), int(header["channels"])
    if len(rows) != t * n:
        raise ParseError(path, rows[-1][0] if rows else 1,
                         f"expected {t * n} coordinate rows ({t} frames x {n} joints), found {len(rows)}")
    coords = np.empty((t, n, c))
    for i, (lineno, parts) in enumerate(rows):
        if len(parts) != c:
            raise ParseError(path, lineno, f"expected {c} values per row, got {len(parts)}")
        try:
            values = [float(p) for p in parts]
        except ValueError:
            raise ParseError(path, lineno, f"malformed float in row: {parts}") from None
        if not all(math.isfinite(v) for v in values):
            raise ParseError(path, lineno, "non-finite coordinate value")
        coords[i // n, i % n] = values
    try:
        return SkeletonSequence(coords, int(header["label"]), header.get("id", ""))
    except ValueError as exc:
        raise ParseError(path, 1, str(exc)) from None


def resample_frames(seq: SkeletonSequence, target: int) -> SkeletonSequence:
    """Resample to `target` frames by linear interpolation of uniform indices.

    target == T returns an exact copy, so resampling is idempotent at the
    target length.
    """
    if target < 1:
        raise ValueError(f"target frame count must be positive, got {target}")
    t = seq.n_frames
    if target == t:
        return SkeletonSequence(seq.coords.copy(), seq.label, seq.sample_id)
    if t == 1:
        out = np.repeat(seq.coords, target, axis=0)
    else:
        pos = np.linspace(0.0, t - 1, target)
        lo = np.floor(pos).astype(int)
        hi = np.minimum(lo + 1, t - 1)
        w = (pos - lo)[:, None, None]
        out = (1.0 - w) * seq.coords[lo] + w * seq.coords[hi]
    return SkeletonSequence(out, seq.label, seq.sample_id)


@dataclass(frozen=True)
class PreprocessConfig:
    """How raw sequences become model inputs.

    Centering subtracts one joint's coordinates from all joints per frame;
    it is off by default because it ties features to a specific joint index
    (breaking joint-permutation invariance) and is only useful for data
    whose absolute placement varies.
    """

    target_frames: int
    with_velocity: bool = True
    center_joint: int | None = None

    def __post_init__(self):
        floor = 2 if self.with_velocity else 1
        if self.target_frames < floor:
            raise ValueError(
                f"target_frames must be >= {floor} (with_velocity={self.with_velocity})"
            )


def compute_features(seq: SkeletonSequence, cfg: PreprocessConfig) -> Tensor:
    """Feature tensor (T, N, C): coordinates, optionally centered, then
    velocity channels v_t = x_{t+1} - x_t with the last frame's velocity zero.
    """
    if seq.n_frames != cfg.target_frames:
        raise ShapeError(
            f"sequence has {seq.n_frames} frames, expected {cfg.target_frames}; resample first"
        )
    coords = seq.coords
    if cfg.center_joint is not None:
        if not 0 <= cfg.center_joint < seq.n_joints:
            raise ValueError(f"center_joint {cfg.center_joint} out of range for {seq.n_joints} joints")
        coords = coords - coords[:, [cfg.center_joint], :]
    if not cfg.with_velocity:
        return Tensor(coords.copy())
    velocity = np.zeros_like(coords)
    velocity[:-1] = coords[1:] - coords[:-1]
    return Tensor(np.concatenate([coords, velocity], axis=2))


# ---------------------------------------------------------------------------
# Manifests


@dataclass(frozen=True)
class SampleRef:
    split: str
    path: str  # relative to the manifest's directory


@dataclass
class DatasetManifest:
    n_classes: int
    class_names: tuple[str, ...]
    topology: JointGraphTopology
    topology_path: str
    samples: tuple[SampleRef, ...]
    root: Path

    def __post_init__(self):
        if len(self.class_names) != self.n_classes:
            raise ValueError(
                f"{len(self.class_names)} class names for {self.n_classes} classes"
            )
        for ref in self.samples:
            if ref.split not in SPLITS:
                raise ValueError(f"unknown split {ref.split!r}")

    def paths(self, split: str) -> list[Path]:
        return [self.root / ref.path for ref in self.samples if ref.split == split]


def save_manifest(manifest: DatasetManifest, path) -> None:
    lines = [MANIFEST_MAGIC, f"classes {manifest.n_classes}"]
    lines += [f"class {k} {name}" for k, name in enumerate(manifest.class_names)]
    lines.append(f"topology {manifest.topology_path}")
    lines += [f"sample {ref.split} {ref.path}" for ref in manifest.samples]
    Path(path).write_text("\n".join(lines) + "\n")


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    n_classes = None
    names: dict[int, str] = {}
    topology_path = None
    samples = []
    saw_magic = False
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if not saw_magic:
            if line != MANIFEST_MAGIC:
                raise ParseError(path, lineno, f"expected {MANIFEST_MAGIC!r} header, got {line!r}")
            saw_magic = True
            continue
        parts = line.split()
        if parts[0] == "classes" and len(parts) == 2 and parts[1].isdigit():
            n_classes = int(parts[1])
        elif parts[0] == "class" and len(parts) >= 3 and parts[1].isdigit():
            names[int(parts[1])] = line.split(maxsplit=2)[2]
        elif parts[0] == "topology" and len(parts) == 2:
            topology_path = parts[1]
        elif parts[0] == "sample" and len(parts) == 3:
            if parts[1] not in SPLITS:
                raise ParseError(path, lineno, f"unknown split {parts[1]!r}")
            samples.append(SampleRef(parts[1], parts[2]))
        else:
            raise ParseError(path, lineno, f"malformed manifest line: {line!r}")
    if not saw_magic:
        raise ParseError(path, 1, f"missing {MANIFEST_MAGIC!r} header")
    if n_classes is None:
        raise ParseError(path, 1, "missing 'classes' line")
    if topology_path is None:
        raise ParseError(path, 1, "missing 'topology' line")
    if sorted(names) != list(range(n_classes)):
        raise ParseError(path, 1, f"need one 'class' line per index 0..{n_classes - 1}")
    topology = load_topology(path.parent / topology_path)
    return DatasetManifest(
        n_classes=n_classes,
        class_names=tuple(names[k] for k in range(n_classes)),
        topology=topology,
        topology_path=topology_path,
        samples=tuple(samples),
        root=path.parent,
    )


def load_split(manifest: DatasetManifest, split: str) -> list[SkeletonSequence]:
    """Load all sequences of one split, validating them against the manifest."""
    out = []
    for p in manifest.paths(split):
        seq = load_sequence(p)
        if seq.n_joints != manifest.topology.n_joints:
            raise ValueError(
                f"{p}: sequence has {seq.n_joints} joints, topology has {manifest.topology.n_joints}"
            )
        if seq.label >= manifest.n_classes:
            raise ValueError(f"{p}: label {seq.label} out of range for {manifest.n_classes} classes")
        out.append(seq)
    return out


# ---------------------------------------------------------------------------
# Synthetic data


@dataclass
class SyntheticDataset:
    topology: JointGraphTopology
    n_classes: int
    class_names: tuple[str, ...]
    train: list[SkeletonSequence]
    test: list[SkeletonSequence]
    moving_joints: tuple[tuple[int, ...], ...]
    seed: int


def chain_topology(n_joints: int, name: str = "") -> JointGraphTopology:
    edges = tuple((i, i + 1) for i in range(n_joints - 1))
    return JointGraphTopology(n_joints, edges, name=name or f"chain{n_joints}")


def _moving_subsets(n_classes: int, n_joints: int) -> list[tuple[int, ...]]:
    # Subset sizes cycle 1, 2, 3; picks are consecutive so subsets stay
    # disjoint whenever the joint budget allows, wrapping only when it runs out.
    subsets = []
    cursor = 0
    for k in range(n_classes):
        size = min(1 + k % 3, n_joints)
        subsets.append(tuple((cursor + i) % n_joints for i in range(size)))
        cursor += size
    return subsets


def synth_generate(
    n_classes: int,
    n_joints: int,
    n_frames: int,
    samples_per_class: int,
    seed: int,
    test_per_class: int | None = None,
) -> SyntheticDataset:
    """Generate a labeled 2-D skeleton dataset where class identity is carried
    by which joints move.

    Each class animates its own 1-3 joint subset on small circular paths with
    a class-specific frequency; every other joint only jitters around the
    origin. With no per-joint rest pose, which joint moved is visible only
    through graph structure or learned mixing, never through coordinates
    alone. Train/test sample ids are disjoint by construction. Deterministic
    given the seed.
    """
    if n_classes < 2:
        raise ValueError(f"need at least 2 classes, got {n_classes}")
    if samples_per_class < 1:
        raise ValueError(f"samples_per_class must be positive, got {samples_per_class}")
    if test_per_class is None:
        test_per_class = max(1, (2 * samples_per_class) // 5)
    rng = np.random.default_rng(seed)
    topology = chain_topology(n_joints)
    subsets = _moving_subsets(n_classes, n_joints)
    freqs = [1.0 + 0.5 * (k % 3) for k in range(n_classes)]
    joint_phases = [rng.uniform(0.0, 2 * np.pi, size=len(s)) for s in subsets]
    t_grid = np.arange(n_frames) / n_frames

    def make(k: int, split: str, index: int) -> SkeletonSequence:
        coords = rng.normal(0.0, 0.03, size=(n_frames, n_joints, 2))
        phase = rng.uniform(0.0, 2 * np.pi)
        angle = 2 * np.pi * freqs[k] * t_grid[:, None] + phase + joint_phases[k][None, :]
        motion = 0.5 * np.stack([np.cos(angle), np.sin(angle)], axis=2)
        coords[:, list(subsets[k]), :] += motion
        return SkeletonSequence(coords, k, f"c{k:02d}-{split}-{index:03d}")

    train = [make(k, "train", i) for k in range(n_classes) for i in range(samples_per_class)]
    test = [make(k, "test", i) for k in range(n_classes) for i in range(test_per_class)]
    names = tuple(f"action-{k:02d}" for k in range(n_classes))
    return SyntheticDataset(topology, n_classes, names, train, test, tuple(subsets), seed)


def write_dataset(ds: SyntheticDataset, out_dir, force: bool = False) -> DatasetManifest:
    """Write topology, sequence files, and a manifest under `out_dir`."""
    out = Path(out_dir)
    if out.exists() and any(out.iterdir()) and not force:
        raise FileExistsError(f"{out} is not empty; pass force to overwrite")
    (out / "train").mkdir(parents=True, exist_ok=True)
    (out / "test").mkdir(parents=True, exist_ok=True)
    save_topology(ds.topology, out / "topology.txt")
    refs = []
    for split, seqs in (("train", ds.train), ("test", ds.test)):
        for seq in seqs:
            rel = f"{split}/{seq.sample_id}.skseq"
            save_sequence(seq, out / rel)
            refs.append(SampleRef(split, rel))
    manifest = DatasetManifest(
        n_classes=ds.n_classes,
        class_names=ds.class_names,
        topology=ds.topology,
        topology_path="topology.txt",
        samples=tuple(refs),
        root=out,
    )
    save_manifest(manifest, out / "manifest.txt")
    return manifest


# ---------------------------------------------------------------------------
# Sequence-level noise


def shuffle_joints(seq: SkeletonSequence, spec: NoiseSpec) -> SkeletonSequence:
    """Permute `spec.count` uniformly chosen joints by a uniform derangement,
    constant across frames. The permutation has no fixed points, so the count
    is exactly the number of corrupted joints; count=1 is therefore impossible.
    """
    if spec.kind is not NoiseKind.SHUFFLE_JOINTS:
        raise ValueError(f"expected shuffle noise, got {spec.kind.value}")
    if spec.count > seq.n_joints:
        raise ValueError(f"cannot shuffle {spec.count} of {seq.n_joints} joints")
    if spec.count == 0:
        return SkeletonSequence(seq.coords.copy(), seq.label, seq.sample_id)
    if spec.count == 1:
        raise ValueError("no derangement of a single joint exists; count must be 0 or >= 2")
    rng = np.random.default_rng(spec.seed)
    chosen = np.sort(rng.choice(seq.n_joints, size=spec.count, replace=False))
    while True:
        perm = rng.permutation(spec.count)
        if not np.any(perm == np.arange(spec.count)):
            break
    coords = seq.coords.copy()
    coords[:, chosen, :] = seq.coords[:, chosen[perm], :]
    return SkeletonSequence(coords, seq.label, seq.sample_id)


def drop_joints(seq: SkeletonSequence, spec: NoiseSpec) -> SkeletonSequence:
    """Zero the coordinates of `spec.count` uniformly chosen joints in all frames."""
    if spec.kind is not NoiseKind.DROP_JOINTS:
        raise ValueError(f"expected drop noise, got {spec.kind.value}")
    if spec.count >= seq.n_joints:
        raise ValueError(f"cannot drop {spec.count} of {seq.n_joints} joints")
    if spec.count == 0:
        return SkeletonSequence(seq.coords.copy(), seq.label, seq.sample_id)
    rng = np.random.default_rng(spec.seed)
    chosen = np.sort(rng.choice(seq.n_joints, size=spec.count, replace=False))
    coords = seq.coords.copy()
    coords[:, chosen, :] = 0.0
    return SkeletonSequence(coords, seq.label, seq.sample_id)


def apply_sequence_noise(seq: SkeletonSequence, specs) -> SkeletonSequence:
    for spec in specs:
        if spec.kind is NoiseKind.SHUFFLE_JOINTS:
            seq = shuffle_joints(seq, spec)
        elif spec.kind is NoiseKind.DROP_JOINTS:
            seq = drop_joints(seq, spec)
        else:
            raise ValueError(f"{spec.kind.value} noise applies to topologies, not sequences")
    return seq


# ---------------------------------------------------------------------------
# Model-ready datasets


@dataclass
class PreparedSample:
    features: np.ndarray  # (T, N, C)
    label: int
    sample_id: str


@dataclass
class PreparedDataset:
    topology: JointGraphTopology
    n_classes: int
    in_channels: int
    train: list[PreparedSample]
    test: list[PreparedSample]


def prepare_dataset(
    topology: JointGraphTopology,
    n_classes: int,
    train_seqs,
    test_seqs,
    cfg: PreprocessConfig,
    noise=(),
    test_only_noise: bool = False,
) -> PreparedDataset:
    """Noise (optionally train too), resample, and featurize both splits."""
    seq_specs = [s for s in noise if s.kind is not NoiseKind.WRONG_EDGES]

    def prep(seqs, noisy):
        out = []
        for seq in seqs:
            if noisy and seq_specs:
                seq = apply_sequence_noise(seq, seq_specs)
            seq = resample_frames(seq, cfg.target_frames)
            out.append(PreparedSample(compute_features(seq, cfg).data, seq.label, seq.sample_id))
        return out

    train = prep(train_seqs, not test_only_noise)
    test = prep(test_seqs, True)
    samples = train or test
    if not samples:
        raise ValueError("no sequences to prepare")
    return PreparedDataset(topology, n_classes, samples[0].features.shape[2], train, test)
