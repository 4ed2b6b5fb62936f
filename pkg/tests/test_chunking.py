import numpy as np
import pytest

from doc2record import tensor as T
from doc2record.chunking import ChunkBatch, attention_cost, chunk_document, fuse_encodings, unchunk
from doc2record.model import ModelConfig, encode_chunk, init_params
from doc2record.tokenizer import PAD_ID


def test_basic_arithmetic():
    batch = chunk_document(np.arange(3, 1028, dtype=np.int32), 512, 64)
    assert batch.m == 3
    assert (~batch.pad_mask[2]).sum() == 511
    assert not batch.truncated


def test_empty_sequence_gives_one_pad_chunk():
    batch = chunk_document(np.array([], dtype=np.int32), 16, 4)
    assert batch.m == 1
    assert not batch.pad_mask.any()
    assert (batch.chunks == PAD_ID).all()


def test_truncation_at_budget():
    ids = np.arange(3, 40003, dtype=np.int32) % 30000 + 3
    batch = chunk_document(ids, 512, 64)
    assert batch.m == 64
    assert batch.truncated
    assert batch.pad_mask.sum() == 512 * 64  # 32,768 tokens kept
    np.testing.assert_array_equal(unchunk(batch), ids[:32768])


def test_round_trip_without_truncation():
    rng = np.random.default_rng(0)
    for n in (0, 1, 15, 16, 17, 100):
        ids = rng.integers(3, 1000, size=n).astype(np.int32)
        batch = chunk_document(ids, 16, 100)
        assert not batch.truncated
        np.testing.assert_array_equal(unchunk(batch), ids)


def test_fuse_shapes_and_identity():
    config = ModelConfig(d_model=16, n_heads=2, n_enc_layers=1, n_dec_layers=1,
                         d_ff=32, vocab_size=40, chunk_size=8, max_chunks=4,
                         max_target_len=8, dropout=0.0)
    params = init_params(config, 0)
    rng = np.random.default_rng(1)
    ids = rng.integers(3, 40, size=8).astype(np.int32)
    batch = chunk_document(ids, 8, 4)
    enc = encode_chunk(batch.chunks[0], batch.pad_mask[0], 0, params, config)
    memory, valid = fuse_encodings([enc], batch.pad_mask)
    np.testing.assert_array_equal(memory.value, enc.value)  # m=1 identity

    ids2 = rng.integers(3, 40, size=20).astype(np.int32)
    batch2 = chunk_document(ids2, 8, 4)
    encs = [encode_chunk(batch2.chunks[i], batch2.pad_mask[i], i, params, config)
            for i in range(batch2.m)]
    memory2, valid2 = fuse_encodings(encs, batch2.pad_mask)
    assert memory2.value.shape[0] == batch2.m * 8
    assert valid2.sum() == 20


def test_fuse_rejects_mismatched_shapes():
    a = T.leaf(np.zeros((4, 8), np.float32))
    b = T.leaf(np.zeros((4, 6), np.float32))
    with pytest.raises(T.ShapeError):
        fuse_encodings([a, b], np.ones((2, 4), bool))


def make_config(c=512, layers=2, heads=4, d=64):
    return ModelConfig(d_model=d, n_heads=heads, n_enc_layers=layers, n_dec_layers=layers,
                       d_ff=2 * d, vocab_size=100, chunk_size=c, max_chunks=64,
                       max_target_len=8, dropout=0.0)


def test_cost_report_paper_budget():
    config = make_config(c=512, layers=1, heads=1)
    report = attention_cost(config, 64)
    assert report.encoder_attn_entries == 64 * 512 ** 2 == 16_777_216
    assert report.dense_attn_entries == 32_768 ** 2 == 1_073_741_824
    assert report.ratio == 64


def test_cost_ratio_equals_m_and_linearity():
    config = make_config(c=32, layers=3, heads=2)
    prev = None
    for m in (1, 2, 4, 8, 16):
        rep = attention_cost(config, m)
        assert rep.ratio == m
        if prev is not None:
            assert rep.encoder_attn_entries == 2 * prev
        prev = rep.encoder_attn_entries


def test_cost_report_serializes_kv():
    text = attention_cost(make_config(c=16), 4).as_kv_text()
    assert "encoder_attn_entries=" in text and "ratio=4.0" in text


def test_runtime_accountant_matches_cost_report():
    config = ModelConfig(d_model=32, n_heads=2, n_enc_layers=2, n_dec_layers=1,
                         d_ff=64, vocab_size=64, chunk_size=16, max_chunks=16,
                         max_target_len=8, dropout=0.0)
    params = init_params(config, 0)
    rng = np.random.default_rng(2)
    for m in (1, 2, 4):
        ids = rng.integers(3, 64, size=m * 16).astype(np.int32)
        batch = chunk_document(ids, 16, 16)
        with T.trace() as tr:
            for i in range(batch.m):
                encode_chunk(batch.chunks[i], batch.pad_mask[i], i, params, config)
        assert tr.total_attn_entries("enc.self") == attention_cost(config, m).encoder_attn_entries
