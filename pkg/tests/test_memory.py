import math

import numpy as np
import pytest
from scipy import stats

from gbmem import bmm
from gbmem.bitmatrix import BitMatrix
from gbmem.errors import DegenerateInputError, DuplicateClassError, EmptyMemoryError, TruncatedPayloadError
from gbmem.memory import (
    ClassEntry,
    GbmStore,
    LatentReplayBuffer,
    MemoryRow,
    compose_batch,
    decode_store,
    encode_entry,
    encode_store,
    generate,
    load_store,
    lr_replay,
    lr_store,
    memory_bits_gbm,
    memory_bits_lr,
    memory_report_csv,
    save_store,
    update,
)
from gbmem.rng import SeededRng


def bits(n, d, p, seed):
    return (np.random.default_rng(seed).random((n, d)) < p).astype(np.uint8)


def fixed_store(n_trains, mu=0.5, d=4, weighting="uniform"):
    entries = tuple(
        ClassEntry(c, bmm.quantize(bmm.BmmParams(np.full((1, d), mu), [1.0]), 8), n)
        for c, n in enumerate(n_trains)
    )
    return GbmStore(d, 1, 8, weighting, entries)


# -- update ------------------------------------------------------------------


def test_update_first_class():
    store = update(GbmStore(d=16, k=3, q=8), 0, bits(50, 16, 0.5, 0), bmm.EmConfig(k=3), SeededRng(0))
    assert store.class_ids == [0]
    assert store.entries[0].model.k == 3 and store.entries[0].n_train == 50


def test_update_is_append_only():
    s1 = GbmStore(d=12, k=2, q=5).update(0, bits(40, 12, 0.3, 1), bmm.EmConfig(k=2), SeededRng(1))
    before = encode_entry(s1.entries[0])
    s2 = s1.update(1, bits(40, 12, 0.7, 2), bmm.EmConfig(k=2), SeededRng(2))
    assert s2.class_ids == [0, 1]
    assert encode_entry(s2.entries[0]) == before
    assert s1.class_ids == [0]


def test_update_identical_rows():
    row = np.array([1, 0, 1, 1, 0, 0, 1, 0, 1, 1])
    for q in (1, 4, 8, 32):
        store = GbmStore(d=10, k=2, q=q).update(3, np.tile(row, (20, 1)), bmm.EmConfig(k=2), SeededRng(q))
        mu = store.entries[0].params().mu
        assert np.abs(mu - row).max() <= bmm.EPS_P + 1 / (2 * (2**q - 1))


def test_update_errors():
    store = GbmStore(d=4, k=2).update(0, bits(10, 4, 0.5, 0), bmm.EmConfig(k=2), SeededRng(0))
    with pytest.raises(DuplicateClassError):
        store.update(0, bits(10, 4, 0.5, 1), bmm.EmConfig(k=2), SeededRng(0))
    with pytest.raises(DegenerateInputError):
        store.update(1, bits(1, 4, 0.5, 1), bmm.EmConfig(k=2), SeededRng(0))


# -- generate ----------------------------------------------------------------


def test_generate_single_class_labels():
    z, y = generate(fixed_store([10]), 100, SeededRng(0))
    assert z.shape == (100, 4) and set(y.tolist()) == {0}


def test_generate_empty_store():
    with pytest.raises(EmptyMemoryError):
        generate(GbmStore(d=4), 5, SeededRng(0))
    z, y = generate(GbmStore(d=4), 0, SeededRng(0))
    assert z.shape == (0, 4) and y.size == 0


def test_generate_uniform_class_counts():
    _, y = generate(fixed_store([100, 300]), 10000, SeededRng(1))
    assert abs(np.sum(y == 0) - 5000) <= 150


def test_generate_by_count_class_counts():
    _, y = generate(fixed_store([100, 300], weighting="by_count"), 10000, SeededRng(2))
    counts = np.bincount(y, minlength=2)
    assert abs(counts[0] - 2500) <= 130 and abs(counts[1] - 7500) <= 130


def test_generate_bit_frequencies_match_prototype():
    mu = np.linspace(0.05, 0.95, 30)
    qb = bmm.quantize(bmm.BmmParams([mu], [1.0]), 8)
    store = GbmStore(30, 1, 8, entries=(ClassEntry(0, qb, 10),))
    n = 10**4
    z, _ = generate(store, n, SeededRng(3))
    target = bmm.dequantize(qb).mu[0]
    assert np.all(np.abs(z.to_array().mean(axis=0) - target) <= 4 * math.sqrt(0.25 / n))


def test_generate_mixture_within_class():
    qb = bmm.quantize(bmm.BmmParams([[0.0, 1.0], [1.0, 0.0]], [0.2, 0.8]), 4)
    store = GbmStore(2, 2, 4, entries=(ClassEntry(5, qb, 10),))
    z, y = generate(store, 5000, SeededRng(4))
    share = z.to_array()[:, 0].mean()
    assert abs(share - 0.8) < 3 * math.sqrt(0.16 / 5000)
    assert set(y.tolist()) == {5}


def test_weightings_agree_when_balanced():
    a = generate(fixed_store([200] * 4), 8000, SeededRng(5))[1]
    b = generate(fixed_store([200] * 4, weighting="by_count"), 8000, SeededRng(6))[1]
    table = np.stack([np.bincount(a, minlength=4), np.bincount(b, minlength=4)])
    assert stats.chi2_contingency(table)[1] > 0.01


# -- batch composition ---------------------------------------------------------


@pytest.mark.parametrize("b,n_new,n_old,expected", [
    (120, 10, 50, (20, 100)),
    (128, 10, 50, (21, 107)),
    (64, 2, 2, (32, 32)),
    (128, 10, 0, (128, 0)),
    (1, 1, 100, (1, 0)),
])
def test_compose_batch(b, n_new, n_old, expected):
    assert compose_batch(b, n_new, n_old) == expected


def test_compose_batch_half_rounds_up():
    # 10 * 1 / 4 = 2.5 -> 3
    assert compose_batch(10, 1, 3) == (3, 7)


def test_compose_batch_sums_to_b():
    for b in (1, 2, 7, 64, 128, 511, 512):
        for n_new in range(1, 101, 3):
            for n_old in range(0, 101, 3):
                nn, no = compose_batch(b, n_new, n_old)
                assert nn + no == b and nn >= 1 and no >= 0


# -- memory accounting -------------------------------------------------------


def test_memory_formulas():
    assert memory_bits_gbm(1, 12544, 10, 32) == 4_014_080
    assert memory_bits_lr(75, 12544, 10) == 9_408_000
    assert memory_bits_gbm(0, 12544, 10, 32) == 0 and memory_bits_lr(0, 12544, 10) == 0


def test_memory_gbm_linear():
    base = memory_bits_gbm(2, 100, 5, 8)
    assert memory_bits_gbm(4, 100, 5, 8) == 2 * base
    assert memory_bits_gbm(2, 300, 5, 8) == 3 * base
    assert memory_bits_gbm(2, 100, 15, 8) == 3 * base
    assert memory_bits_gbm(2, 100, 5, 24) == 3 * base


def test_store_memory_bits():
    store = fixed_store([5, 5, 5], d=4)
    assert store.memory_bits() == 1 * 4 * 3 * 8


def test_memory_report_csv():
    text = memory_report_csv([MemoryRow("gbm", 1, 32, 12544, 10), MemoryRow("lr", 75, 1, 12544, 10)])
    lines = text.strip().split("\n")
    assert lines[0] == "method,K_or_E,q,D,n_classes,bits,Mb"
    assert lines[1] == "gbm,1,32,12544,10,4014080,4.0"
    assert lines[2] == "lr,75,1,12544,10,9408000,9.4"


# -- latent replay -----------------------------------------------------------


def test_lr_store_keeps_all_when_small():
    z = bits(3, 6, 0.5, 0)
    buf = lr_store(LatentReplayBuffer(5, 6), 0, z, SeededRng(0))
    np.testing.assert_array_equal(buf.rows_for(0).to_array(), z)


def test_lr_store_subset():
    z = np.eye(100, dtype=np.uint8)  # every row distinct
    buf = lr_store(LatentReplayBuffer(10, 100), 0, z, SeededRng(1))
    kept = buf.rows_for(0).to_array()
    assert kept.shape == (10, 100)
    assert len({r.tobytes() for r in kept}) == 10
    assert all(r.tobytes() in {x.tobytes() for x in z} for r in kept)


def test_lr_replay_balance_and_errors():
    buf = LatentReplayBuffer(4, 6)
    with pytest.raises(EmptyMemoryError):
        lr_replay(buf, 3, SeededRng(0))
    buf = buf.update(0, bits(20, 6, 0.2, 1), rng=SeededRng(1)).update(1, bits(20, 6, 0.8, 2), rng=SeededRng(2))
    with pytest.raises(DuplicateClassError):
        buf.update(1, bits(20, 6, 0.8, 2), rng=SeededRng(2))
    z, y = lr_replay(buf, 1000, SeededRng(3))
    assert abs(np.sum(y == 0) - 500) <= 47
    stored = {c: {r.tobytes() for r in buf.rows_for(c).to_array()} for c in (0, 1)}
    assert all(row.tobytes() in stored[c] for row, c in zip(z.to_array(), y))
    assert buf.memory_bits() == 4 * 6 * 2


# -- serialization -----------------------------------------------------------


def test_store_roundtrip(tmp_path):
    store = GbmStore(d=9, k=2, q=3, class_weighting="by_count")
    for c in (4, 1, 7):
        store = store.update(c, bits(30, 9, 0.1 * c, c), bmm.EmConfig(k=2), SeededRng(c))
    save_store(store, tmp_path / "s.gbms")
    back = load_store(tmp_path / "s.gbms")
    assert back.class_ids == [4, 1, 7] and back.class_weighting == "by_count"
    assert encode_store(back) == encode_store(store)
    for a, b in zip(store.entries, back.entries):
        np.testing.assert_array_equal(a.model.levels, b.model.levels)
        assert a.n_train == b.n_train


def test_store_bytes_prefix_stable():
    s1 = GbmStore(d=5, k=1, q=8).update(0, bits(10, 5, 0.5, 0), bmm.EmConfig(k=1), SeededRng(0))
    s2 = s1.update(1, bits(10, 5, 0.5, 1), bmm.EmConfig(k=1), SeededRng(1))
    a, b = encode_store(s1), encode_store(s2)
    header = 18
    assert b[header:len(a)] == a[header:]


def test_store_truncated():
    store = fixed_store([3, 3])
    buf = encode_store(store)
    with pytest.raises(TruncatedPayloadError):
        decode_store(buf[:-2])
