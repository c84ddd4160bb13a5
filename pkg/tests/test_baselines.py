import numpy as np
import pytest

from roomecho import baselines as bl
from roomecho.simulate import RIRRecord

FS = 22050
N = 9600


def make_record(room_id, source, receiver, seed=0):
    rng = np.random.default_rng(seed)
    wave = (rng.standard_normal(N) * 0.01).astype(np.float32)
    return RIRRecord(waveform=wave, room_id=room_id,
                     source=np.asarray(source, dtype=float),
                     receiver=np.asarray(receiver, dtype=float))


def make_refs(receiver=(2.0, 2.0, 1.5)):
    sources = [(1.0, 1.0, 1.0), (3.0, 3.0, 2.0), (1.0, 3.5, 1.2)]
    recs = [make_record("r0", s, receiver, seed=i) for i, s in enumerate(sources)]
    return bl.ReferenceSet.from_records(recs)


def test_reference_set_shared_receiver_enforced():
    a = make_record("r0", (1, 1, 1), (2, 2, 1.5))
    b = make_record("r0", (1, 2, 1), (2.5, 2, 1.5))
    with pytest.raises(ValueError):
        bl.ReferenceSet.from_records([a, b])


def test_random_across_singleton_and_determinism():
    rec = make_record("r0", (1, 1, 1), (2, 2, 1.5))
    assert bl.predict_random_across([rec], seed=0) is rec
    pool = [make_record(f"r{i}", (1, 1, 1), (2, 2, 1.5), seed=i) for i in range(5)]
    a = bl.predict_random_across(pool, seed=42)
    b = bl.predict_random_across(pool, seed=42)
    assert a is b


def test_random_across_uniformity():
    pool = [make_record(f"r{i}", (1, 1, 1), (2, 2, 1.5), seed=i) for i in range(8)]
    counts = np.zeros(8)
    for seed in range(10_000):
        pick = bl.predict_random_across(pool, seed=seed)
        counts[next(i for i, r in enumerate(pool) if r is pick)] += 1
    expected = 10_000 / 8
    sigma = np.sqrt(10_000 * (1 / 8) * (7 / 8))
    assert np.all(np.abs(counts - expected) < 3 * sigma)


def test_random_same_room_scoping():
    pool = [make_record("a", (1, 1, 1), (2, 2, 1.5), seed=1),
            make_record("b", (1, 2, 1), (2, 2, 1.5), seed=2)]
    pick = bl.predict_random_same(pool, "b", seed=0)
    assert pick.room_id == "b"
    only = [make_record("c", (1, 1, 1), (2, 2, 1.5), seed=3)]
    assert bl.predict_random_same(only, "c", seed=9) is only[0]
    with pytest.raises(ValueError):
        bl.predict_random_same(pool, "zzz", seed=0)


def test_random_same_uniform_within_room():
    pool = [make_record("a", (i, 1, 1), (2, 2, 1.5), seed=i) for i in range(4)]
    pool += [make_record("b", (1, 1, 1), (2, 2, 1.5), seed=99)]
    counts = np.zeros(4)
    for seed in range(10_000):
        pick = bl.predict_random_same(pool, "a", seed=seed)
        counts[next(i for i, r in enumerate(pool) if r is pick)] += 1
    expected = 10_000 / 4
    sigma = np.sqrt(10_000 * 0.25 * 0.75)
    assert np.all(np.abs(counts - expected) < 3 * sigma)


def test_nearest_exact_position_zero_shift():
    refs = make_refs()
    target = refs.records[1].source
    out = bl.predict_nearest(refs, target)
    assert np.allclose(out, refs.records[1].waveform.astype(float))


def test_nearest_argmin():
    refs = make_refs()
    target = np.array([2.9, 2.9, 2.0])  # closest to records[1]
    out = bl.predict_nearest(refs, target, align=False)
    assert np.array_equal(out, refs.records[1].waveform.astype(float))


def test_nearest_tie_lowest_index():
    receiver = (2.0, 2.0, 1.5)
    recs = [make_record("r", (1.0, 2.0, 1.5), receiver, seed=0),
            make_record("r", (3.0, 2.0, 1.5), receiver, seed=1)]
    refs = bl.ReferenceSet.from_records(recs)
    out = bl.predict_nearest(refs, (2.0, 2.0, 1.5), align=False)
    assert np.array_equal(out, recs[0].waveform.astype(float))


def test_nearest_translation_invariance():
    refs = make_refs()
    target = np.array([1.2, 1.1, 1.3])
    out1 = bl.predict_nearest(refs, target)
    shift = np.array([10.0, -4.0, 0.5])
    moved = bl.ReferenceSet.from_records([
        RIRRecord(waveform=r.waveform, room_id=r.room_id,
                  source=r.source + shift, receiver=r.receiver + shift)
        for r in refs.records])
    out2 = bl.predict_nearest(moved, target + shift)
    assert np.allclose(out1, out2)


def test_interp_weights_degenerate_at_reference():
    refs = make_refs()
    target = refs.records[0].source
    out = bl.predict_linear_interp(refs, target)
    direct = bl.predict_nearest(refs, target)
    # weight on the coincident reference ~ 1; others < 1e-5
    assert np.allclose(out, direct, atol=1e-4 * np.max(np.abs(direct)))


def test_interp_equidistant_half_weights():
    receiver = (2.0, 2.0, 1.5)
    recs = [make_record("r", (1.0, 2.0, 1.5), receiver, seed=0),
            make_record("r", (3.0, 2.0, 1.5), receiver, seed=1)]
    refs = bl.ReferenceSet.from_records(recs)
    out = bl.predict_linear_interp(refs, (2.0, 2.0, 1.5), align=False)
    expected = 0.5 * recs[0].waveform.astype(float) + 0.5 * recs[1].waveform.astype(float)
    assert np.allclose(out, expected)


def test_interp_k1_equals_nearest():
    receiver = (2.0, 2.0, 1.5)
    refs = bl.ReferenceSet.from_records(
        [make_record("r", (1.0, 1.0, 1.0), receiver, seed=5)])
    target = (3.0, 3.0, 2.0)
    assert np.allclose(bl.predict_linear_interp(refs, target),
                       bl.predict_nearest(refs, target))


def test_outputs_finite_and_full_length():
    refs = make_refs()
    for fn in (bl.predict_nearest, bl.predict_linear_interp):
        out = fn(refs, (1.5, 2.5, 1.4))
        assert out.shape == (N,)
        assert np.all(np.isfinite(out))
