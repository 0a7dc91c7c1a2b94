import numpy as np
import pytest

from skgcn.data import (
    DatasetManifest,
    PreprocessConfig,
    SampleRef,
    SkeletonSequence,
    apply_sequence_noise,
    chain_topology,
    compute_features,
    drop_joints,
    load_manifest,
    load_sequence,
    load_split,
    prepare_dataset,
    resample_frames,
    save_manifest,
    save_sequence,
    shuffle_joints,
    synth_generate,
    write_dataset,
)
from skgcn.errors import ParseError, ShapeError
from skgcn.graph import NoiseKind, NoiseSpec


def make_seq(t=4, n=3, c=2, label=1, sid="s0", seed=0):
    rng = np.random.default_rng(seed)
    return SkeletonSequence(rng.normal(size=(t, n, c)), label, sid)


# --- sequence container and files -------------------------------------------


def test_sequence_validation():
    with pytest.raises(ShapeError):
        SkeletonSequence(np.zeros((4, 3)), 0, "x")  # missing channel axis
    with pytest.raises(ValueError):
        SkeletonSequence(np.zeros((4, 3, 4)), 0, "x")  # 4 channels
    with pytest.raises(ValueError):
        SkeletonSequence(np.zeros((4, 3, 2)), -1, "x")
    bad = np.zeros((2, 2, 2))
    bad[0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        SkeletonSequence(bad, 0, "x")


def test_sequence_file_round_trip_bit_exact(tmp_path):
    seq = make_seq(t=5, n=4, c=3, label=2, sid="round-trip")
    p1, p2 = tmp_path / "a.txt", tmp_path / "b.txt"
    save_sequence(seq, p1)
    loaded = load_sequence(p1)
    assert loaded.label == 2 and loaded.sample_id == "round-trip"
    assert np.array_equal(loaded.coords, seq.coords)
    save_sequence(loaded, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_sequence_file_comments_ignored(tmp_path):
    path = tmp_path / "s.txt"
    path.write_text(
        "skseq v1\n# provenance note\nframes 1\njoints 2\nchannels 2\n"
        "label 0\nid tiny\n# frame 0\n0.0 0.0\n1.0 -1.0\n"
    )
    seq = load_sequence(path)
    assert np.array_equal(seq.coords, [[[0.0, 0.0], [1.0, -1.0]]])


def test_sequence_file_errors(tmp_path):
    path = tmp_path / "s.txt"
    path.write_text("skseq v1\nframes 1\njoints 2\nchannels 2\nlabel 0\nid x\n0.0 0.0\n")
    with pytest.raises(ParseError):  # one coordinate row short
        load_sequence(path)

    path.write_text("skseq v2\nframes 1\njoints 1\nchannels 2\nlabel 0\nid x\n0.0 0.0\n")
    with pytest.raises(ParseError):  # unknown format line
        load_sequence(path)

    path.write_text("skseq v1\nframes 1\njoints 1\nchannels 2\nlabel 0\nid x\nnan 0.0\n")
    with pytest.raises(ParseError) as exc:
        load_sequence(path)
    assert exc.value.lineno == 7


# --- resampling and features ------------------------------------------------


def test_resample_same_length_is_exact_copy():
    seq = make_seq()
    out = resample_frames(seq, seq.n_frames)
    assert out.coords is not seq.coords
    assert np.array_equal(out.coords, seq.coords)


def test_resample_two_to_three_interpolates_midpoint():
    coords = np.zeros((2, 1, 2))
    coords[1] = 4.0
    out = resample_frames(SkeletonSequence(coords, 0, "x"), 3)
    assert np.array_equal(out.coords[:, 0, 0], [0.0, 2.0, 4.0])


def test_resample_single_frame_repeats():
    coords = np.full((1, 2, 2), 3.5)
    out = resample_frames(SkeletonSequence(coords, 0, "x"), 4)
    assert out.n_frames == 4
    assert np.all(out.coords == 3.5)


def test_resample_rejects_nonpositive_target():
    with pytest.raises(ValueError):
        resample_frames(make_seq(), 0)


def test_features_static_pose_has_zero_velocity():
    coords = np.ones((4, 3, 2))
    feats = compute_features(SkeletonSequence(coords, 0, "x"), PreprocessConfig(4))
    assert feats.data.shape == (4, 3, 4)
    assert np.array_equal(feats.data[..., :2], coords)
    assert np.array_equal(feats.data[..., 2:], np.zeros((4, 3, 2)))


def test_features_linear_motion_velocity():
    coords = np.arange(4, dtype=float)[:, None, None] * np.ones((4, 2, 2))
    feats = compute_features(SkeletonSequence(coords, 0, "x"), PreprocessConfig(4))
    vel = feats.data[..., 2:]
    assert np.all(vel[:-1] == 1.0)
    assert np.all(vel[-1] == 0.0)  # no successor frame


def test_features_without_velocity_keeps_channels():
    seq = make_seq(c=3)
    feats = compute_features(seq, PreprocessConfig(seq.n_frames, with_velocity=False))
    assert feats.data.shape == seq.coords.shape
    assert np.array_equal(feats.data, seq.coords)


def test_features_centering():
    seq = make_seq(t=3, n=4)
    feats = compute_features(seq, PreprocessConfig(3, center_joint=2))
    assert np.max(np.abs(feats.data[:, 2, :2])) == 0.0
    with pytest.raises(ValueError):
        compute_features(seq, PreprocessConfig(3, center_joint=4))


def test_features_requires_resampled_length():
    with pytest.raises(ShapeError):
        compute_features(make_seq(t=4), PreprocessConfig(8))


def test_preprocess_config_floor():
    with pytest.raises(ValueError):
        PreprocessConfig(1)  # velocity needs 2 frames
    PreprocessConfig(1, with_velocity=False)


# --- synthetic data ----------------------------------------------------------


def test_synth_is_deterministic():
    a = synth_generate(3, 9, 12, 4, seed=5)
    b = synth_generate(3, 9, 12, 4, seed=5)
    for sa, sb in zip(a.train + a.test, b.train + b.test):
        assert sa.sample_id == sb.sample_id and sa.label == sb.label
        assert np.array_equal(sa.coords, sb.coords)


def test_synth_counts_and_labels():
    ds = synth_generate(4, 12, 10, 10, seed=1, test_per_class=3)
    assert len(ds.train) == 40 and len(ds.test) == 12
    for k in range(4):
        assert sum(1 for s in ds.train if s.label == k) == 10
        assert sum(1 for s in ds.test if s.label == k) == 3


def test_synth_ids_disjoint_across_splits():
    ds = synth_generate(2, 6, 8, 5, seed=2)
    ids = [s.sample_id for s in ds.train + ds.test]
    assert len(set(ids)) == len(ids)


def test_synth_moving_subsets_disjoint_when_budget_allows():
    ds = synth_generate(3, 9, 8, 2, seed=3)  # sizes 1+2+3 = 6 <= 9 joints
    seen = set()
    for subset in ds.moving_joints:
        assert not (seen & set(subset))
        seen |= set(subset)


def test_synth_still_joints_stay_near_origin():
    ds = synth_generate(2, 8, 30, 3, seed=4)
    moving = set(ds.moving_joints[0]) | set(ds.moving_joints[1])
    still = [j for j in range(8) if j not in moving]
    for seq in ds.train:
        # jitter is sigma=0.03; orbiting joints swing an order of magnitude wider
        assert np.max(np.abs(seq.coords[:, still, :])) < 0.3
        assert np.max(np.abs(seq.coords[:, list(ds.moving_joints[seq.label]), :])) > 0.3


def test_synth_rejects_degenerate_requests():
    with pytest.raises(ValueError):
        synth_generate(1, 6, 8, 4, seed=0)
    with pytest.raises(ValueError):
        synth_generate(2, 6, 8, 0, seed=0)


# --- manifests and on-disk datasets ------------------------------------------


def test_write_dataset_and_reload(tmp_path):
    ds = synth_generate(2, 5, 6, 3, seed=6, test_per_class=2)
    manifest = write_dataset(ds, tmp_path / "out")
    again = load_manifest(tmp_path / "out" / "manifest.txt")
    assert again.n_classes == 2 and again.class_names == manifest.class_names

    train = load_split(again, "train")
    assert len(train) == len(ds.train)
    for orig, back in zip(ds.train, train):
        assert orig.sample_id == back.sample_id
        assert np.array_equal(orig.coords, back.coords)


def test_write_dataset_refuses_overwrite(tmp_path):
    ds = synth_generate(2, 5, 6, 2, seed=7)
    write_dataset(ds, tmp_path / "out")
    with pytest.raises(FileExistsError):
        write_dataset(ds, tmp_path / "out")
    write_dataset(ds, tmp_path / "out", force=True)


def test_manifest_round_trip_bit_exact(tmp_path):
    ds = synth_generate(2, 5, 6, 2, seed=8)
    write_dataset(ds, tmp_path / "out")
    p1 = tmp_path / "out" / "manifest.txt"
    m = load_manifest(p1)
    save_manifest(m, tmp_path / "copy.txt")
    assert p1.read_bytes() == (tmp_path / "copy.txt").read_bytes()


def test_manifest_validation(tmp_path):
    with pytest.raises(ValueError):  # one name for two classes
        DatasetManifest(
            n_classes=2,
            class_names=("only",),
            topology=chain_topology(3),
            topology_path="t.txt",
            samples=(SampleRef("train", "a.skseq"),),
            root=tmp_path,
        )
    path = tmp_path / "m.txt"
    path.write_text("skmanifest v1\nclasses 2\nclass 0 a\nclass 1 b\n")
    with pytest.raises(ParseError):  # no topology line
        load_manifest(path)


def test_load_split_validates_labels(tmp_path):
    ds = synth_generate(2, 5, 6, 2, seed=9)
    write_dataset(ds, tmp_path / "out")
    bad = ds.train[0]
    save_sequence(
        SkeletonSequence(bad.coords, 7, bad.sample_id),
        tmp_path / "out" / "train" / f"{bad.sample_id}.skseq",
    )
    manifest = load_manifest(tmp_path / "out" / "manifest.txt")
    with pytest.raises(ValueError):
        load_split(manifest, "train")


# --- joint-level noise --------------------------------------------------------


def test_shuffle_zero_count_copies():
    seq = make_seq()
    out = shuffle_joints(seq, NoiseSpec(NoiseKind.SHUFFLE_JOINTS, 0, 1))
    assert out.coords is not seq.coords
    assert np.array_equal(out.coords, seq.coords)


def test_shuffle_two_joints_swaps_them():
    seq = make_seq(n=2)
    out = shuffle_joints(seq, NoiseSpec(NoiseKind.SHUFFLE_JOINTS, 2, 3))
    assert np.array_equal(out.coords[:, 0], seq.coords[:, 1])
    assert np.array_equal(out.coords[:, 1], seq.coords[:, 0])


def test_shuffle_moves_exactly_count_joints():
    seq = make_seq(t=3, n=8)
    for count in (2, 3, 5, 8):
        out = shuffle_joints(seq, NoiseSpec(NoiseKind.SHUFFLE_JOINTS, count, 11))
        changed = [j for j in range(8) if not np.array_equal(out.coords[:, j], seq.coords[:, j])]
        assert len(changed) == count


def test_shuffle_single_joint_impossible():
    with pytest.raises(ValueError):
        shuffle_joints(make_seq(), NoiseSpec(NoiseKind.SHUFFLE_JOINTS, 1, 0))


def test_shuffle_deterministic_per_seed():
    seq = make_seq(n=6)
    spec = NoiseSpec(NoiseKind.SHUFFLE_JOINTS, 4, 42)
    assert np.array_equal(shuffle_joints(seq, spec).coords, shuffle_joints(seq, spec).coords)


def test_drop_zeroes_chosen_joints():
    seq = make_seq(t=3, n=5)
    out = drop_joints(seq, NoiseSpec(NoiseKind.DROP_JOINTS, 2, 13))
    zeroed = [j for j in range(5) if np.all(out.coords[:, j] == 0.0)]
    assert len(zeroed) == 2
    kept = [j for j in range(5) if j not in zeroed]
    assert np.array_equal(out.coords[:, kept], seq.coords[:, kept])


def test_drop_count_bound():
    with pytest.raises(ValueError):
        drop_joints(make_seq(n=3), NoiseSpec(NoiseKind.DROP_JOINTS, 3, 0))


def test_noise_preserves_metadata():
    seq = make_seq(label=3, sid="keep-me")
    for out in (
        shuffle_joints(seq, NoiseSpec(NoiseKind.SHUFFLE_JOINTS, 2, 1)),
        drop_joints(seq, NoiseSpec(NoiseKind.DROP_JOINTS, 1, 1)),
    ):
        assert out.label == 3 and out.sample_id == "keep-me"
        assert out.coords.shape == seq.coords.shape


def test_sequence_noise_rejects_topology_specs():
    with pytest.raises(ValueError):
        apply_sequence_noise(make_seq(), [NoiseSpec(NoiseKind.WRONG_EDGES, 1, 0)])


# --- prepared datasets --------------------------------------------------------


def test_prepare_dataset_shapes_and_channels():
    ds = synth_generate(2, 5, 9, 3, seed=10, test_per_class=2)
    prep = prepare_dataset(
        ds.topology, ds.n_classes, ds.train, ds.test, PreprocessConfig(target_frames=6)
    )
    assert prep.in_channels == 4  # 2 coords + 2 velocity
    assert all(s.features.shape == (6, 5, 4) for s in prep.train + prep.test)
    assert len(prep.train) == 6 and len(prep.test) == 4


def test_prepare_dataset_dropped_joint_features_are_zero():
    ds = synth_generate(2, 5, 8, 2, seed=11)
    spec = NoiseSpec(NoiseKind.DROP_JOINTS, 1, 21)
    prep = prepare_dataset(
        ds.topology, 2, ds.train, ds.test, PreprocessConfig(8), noise=[spec]
    )
    dropped = np.sort(np.random.default_rng(21).choice(5, size=1, replace=False))[0]
    for s in prep.train + prep.test:
        # zero coordinates stay zero through interpolation, so velocity is zero too
        assert np.all(s.features[:, dropped, :] == 0.0)


def test_prepare_dataset_test_only_noise_leaves_train_clean():
    ds = synth_generate(2, 5, 8, 2, seed=12)
    spec = NoiseSpec(NoiseKind.DROP_JOINTS, 2, 33)
    clean = prepare_dataset(ds.topology, 2, ds.train, ds.test, PreprocessConfig(8))
    noisy = prepare_dataset(
        ds.topology, 2, ds.train, ds.test, PreprocessConfig(8), noise=[spec], test_only_noise=True
    )
    for a, b in zip(clean.train, noisy.train):
        assert np.array_equal(a.features, b.features)
    assert any(
        not np.array_equal(a.features, b.features) for a, b in zip(clean.test, noisy.test)
    )


def test_prepare_dataset_ignores_wrong_edge_specs():
    ds = synth_generate(2, 5, 8, 2, seed=13)
    spec = NoiseSpec(NoiseKind.WRONG_EDGES, 3, 1)
    a = prepare_dataset(ds.topology, 2, ds.train, ds.test, PreprocessConfig(8))
    b = prepare_dataset(ds.topology, 2, ds.train, ds.test, PreprocessConfig(8), noise=[spec])
    for sa, sb in zip(a.train + a.test, b.train + b.test):
        assert np.array_equal(sa.features, sb.features)
