"""Dataset container: stacking, sampling windows, and the on-disk format."""

import numpy as np
import pytest

from motionforge.dataset import MotionDataset, ingest_directory
from motionforge.errors import DatasetError
from motionforge.fixtures import write_locomotion_set
from motionforge.motion import normalize
from motionforge.rng import Stream, philox


def test_stacking_and_clip_recovery(stock_dataset):
    ds = stock_dataset
    assert ds.clip_count == len(ds.records)
    assert ds.frame_count == sum(r.length for r in ds.records)
    assert ds.feature_count == ds.layout.dim
    walk = ds.clip("walk")
    same = ds.clip([r.name for r in ds.records].index("walk"))
    np.testing.assert_array_equal(walk.frames, same.frames)
    assert walk.name == "walk"
    # Rows come back float64 but bit-identical to the float32 store.
    rec = next(r for r in ds.records if r.name == "walk")
    np.testing.assert_array_equal(
        walk.frames.astype(np.float32),
        ds.data[rec.offset:rec.offset + rec.length])
    with pytest.raises(DatasetError):
        ds.clip("no-such-clip")


def test_from_clips_rejects_mismatches(stock_dataset, tiny_dataset):
    walk = stock_dataset.clip("walk")
    other = tiny_dataset.clip(0)
    bad_fps = MotionDataset.from_clips([walk]).clip("walk")
    bad_fps.fps = walk.fps + 1.0
    with pytest.raises(DatasetError):
        MotionDataset.from_clips([walk, bad_fps])
    with pytest.raises(DatasetError):
        MotionDataset.from_clips([])
    # tiny and stock share the walker skeleton, so force a name change
    renamed = other.skeleton.__class__(
        joint_names=tuple(n + "_b" for n in other.skeleton.joint_names),
        parent=other.skeleton.parent,
        reference_offsets=other.skeleton.reference_offsets,
        end_sites=other.skeleton.end_sites)
    bad = MotionDataset.from_clips([other]).clip(0)
    bad.skeleton = renamed
    with pytest.raises(DatasetError):
        MotionDataset.from_clips([walk, bad])


def test_stats_cover_all_frames(stock_dataset):
    ds = stock_dataset
    np.testing.assert_allclose(ds.stats.mean,
                               ds.data.astype(np.float64).mean(axis=0),
                               atol=1e-12)


def test_sample_windows_are_consecutive_rows(stock_dataset):
    ds = stock_dataset
    rng = philox(3, Stream.TRAIN_BATCH)
    win = ds.sample_windows(rng, 64, 4)
    assert win.shape == (64, 5, ds.feature_count)
    # Every window must denormalize to 5 consecutive rows of one clip.
    denorm = win * ds.stats.std + ds.stats.mean
    data = ds.data.astype(np.float64)
    norm = normalize(data, ds.stats)
    for w in denorm[:8]:
        first = np.flatnonzero(
            np.all(np.abs(data - w[0]) < 1e-6, axis=1))
        assert first.size >= 1
        i = int(first[0])
        np.testing.assert_allclose(w, data[i:i + 5], atol=1e-6)
    assert np.all(np.isfinite(norm))


def test_windows_never_cross_clip_boundaries(stock_dataset):
    ds = stock_dataset
    horizon = 6
    starts = ds._starts_for(horizon)
    for r in ds.records:
        inside = starts[(starts >= r.offset) & (starts < r.offset + r.length)]
        if inside.size:
            assert inside.max() + horizon < r.offset + r.length


def test_sample_pairs_shape_and_determinism(stock_dataset):
    a1, b1 = stock_dataset.sample_pairs(philox(9, Stream.TRAIN_BATCH), 32)
    a2, b2 = stock_dataset.sample_pairs(philox(9, Stream.TRAIN_BATCH), 32)
    np.testing.assert_array_equal(a1, a2)
    np.testing.assert_array_equal(b1, b2)
    assert a1.shape == b1.shape == (32, stock_dataset.feature_count)


def test_transition_pairs_cover_every_consecutive_pair(tiny_dataset):
    prev, nxt = tiny_dataset.transition_pairs()
    expected = sum(r.length - 1 for r in tiny_dataset.records)
    assert prev.shape == nxt.shape == (expected, tiny_dataset.feature_count)
    data = normalize(tiny_dataset.data.astype(np.float64),
                     tiny_dataset.stats)
    k = 0
    for r in tiny_dataset.records:
        rows = data[r.offset:r.offset + r.length]
        np.testing.assert_array_equal(prev[k:k + r.length - 1], rows[:-1])
        np.testing.assert_array_equal(nxt[k:k + r.length - 1], rows[1:])
        k += r.length - 1


def test_window_horizon_validation(tiny_dataset):
    with pytest.raises(DatasetError):
        tiny_dataset._starts_for(0)
    with pytest.raises(DatasetError):
        tiny_dataset.sample_windows(philox(0, Stream.TRAIN_BATCH), 4, 10_000)


def test_save_load_roundtrip_exact(tmp_path, tiny_dataset):
    path = tmp_path / "set.mds"
    tiny_dataset.save(path)
    back = MotionDataset.load(path)
    np.testing.assert_array_equal(back.data, tiny_dataset.data)
    np.testing.assert_array_equal(back.stats.mean, tiny_dataset.stats.mean)
    np.testing.assert_array_equal(back.stats.std, tiny_dataset.stats.std)
    assert back.fps == tiny_dataset.fps
    assert [r.name for r in back.records] == [r.name for r in
                                              tiny_dataset.records]
    assert back.skeleton.joint_names == tiny_dataset.skeleton.joint_names
    for a, b in zip(back.records, tiny_dataset.records):
        assert a.initial_root == b.initial_root
        assert (a.offset, a.length) == (b.offset, b.length)
    # Second save produces the identical byte stream.
    path2 = tmp_path / "set2.mds"
    back.save(path2)
    assert path.read_bytes() == path2.read_bytes()


def test_load_rejects_corrupt_files(tmp_path, tiny_dataset):
    path = tmp_path / "set.mds"
    tiny_dataset.save(path)
    blob = path.read_bytes()

    short = tmp_path / "short.mds"
    short.write_bytes(blob[:2])
    with pytest.raises(DatasetError):
        MotionDataset.load(short)

    cut_header = tmp_path / "cut.mds"
    cut_header.write_bytes(blob[:20])
    with pytest.raises(DatasetError):
        MotionDataset.load(cut_header)

    ragged = tmp_path / "ragged.mds"
    ragged.write_bytes(blob[:-3])
    with pytest.raises(DatasetError):
        MotionDataset.load(ragged)

    garbled = tmp_path / "garbled.mds"
    garbled.write_bytes(blob[:5] + b"X" + blob[6:])
    with pytest.raises(DatasetError):
        MotionDataset.load(garbled)


def test_ingest_directory(tmp_path):
    write_locomotion_set(tmp_path)
    ds = ingest_directory(tmp_path)
    assert ds.clip_count >= 4
    assert ds.frame_count > 100
    assert {r.name for r in ds.records} >= {"walk", "idle"}
    with pytest.raises(DatasetError):
        ingest_directory(tmp_path / "empty")
