import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hydraheads.checkpoint import (
    HeaderMismatchError,
    NotACheckpointError,
    TruncatedCheckpointError,
    VersionMismatchError,
    decode,
    encode,
    load_checkpoint,
    predicted_size,
    resave,
)
from hydraheads.ingest import Vocabulary
from hydraheads.model import (
    HEAD_PARAM_NAMES,
    CompatibilityError,
    HydraHeads,
    ModelConfig,
    attach_hydra,
    baseline_model,
    init_model,
)
from hydraheads.store import export_heads, load_body, load_heads, load_model, save_body, save_model

BIG = ModelConfig(vocab_size=1000, d_model=128, n_heads=4, n_body_layers=2, d_ff=512, max_len=64)


def vocab_of(size):
    return Vocabulary([f"w{i}" for i in range(size - 3)])


class TestContainer:
    @given(st.lists(st.tuples(st.integers(0, 4), st.integers(1, 4)), min_size=0, max_size=4),
           st.integers(0, 2**32 - 1))
    def test_round_trip_is_byte_identical(self, shapes, seed):
        rng = np.random.default_rng(seed)
        entries = [(f"t{i}", rng.normal(size=s)) for i, s in enumerate(shapes)]
        blob = encode("test", {"a": 1}, entries, {"note": "x"})
        ckpt = decode(blob)
        assert resave(ckpt) == blob
        for name, arr in entries:
            assert np.array_equal(ckpt.tensors[name], arr.astype(np.float32))

    def test_size_prediction_exact(self):
        entries = [("a", np.zeros((3, 5))), ("b", np.zeros(7))]
        blob = encode("k", {"x": 2}, entries)
        assert len(blob) == predicted_size("k", {"x": 2}, [("a", (3, 5)), ("b", (7,))])

    def test_bad_magic(self):
        with pytest.raises(NotACheckpointError):
            decode(b"PK\x03\x04" + bytes(20))

    def test_tiny_garbage(self):
        with pytest.raises(NotACheckpointError):
            decode(b"x")

    def test_version_mismatch(self):
        blob = bytearray(encode("k", {}, [("a", np.ones(2))]))
        blob[4] = 9
        with pytest.raises(VersionMismatchError):
            decode(bytes(blob))

    def test_truncated_payload(self):
        blob = encode("k", {}, [("a", np.ones(10))])
        with pytest.raises(TruncatedCheckpointError):
            decode(blob[:-4])

    def test_truncated_header(self):
        blob = encode("k", {}, [("a", np.ones(10))])
        with pytest.raises(TruncatedCheckpointError):
            decode(blob[:12])

    def test_trailing_bytes(self):
        blob = encode("k", {}, [("a", np.ones(10))])
        with pytest.raises(HeaderMismatchError):
            decode(blob + b"\0\0\0\0")

    def test_garbled_header(self):
        header = b"{not json"
        blob = struct.pack("<4sBI", b"HYDR", 1, len(header)) + header
        with pytest.raises(HeaderMismatchError):
            decode(blob)

    def test_errors_are_distinct(self):
        kinds = {NotACheckpointError, VersionMismatchError, TruncatedCheckpointError, HeaderMismatchError}
        assert len(kinds) == 4
        for a in kinds:
            for b in kinds - {a}:
                assert not issubclass(a, b)


class TestHeadsCheckpoint:
    def test_stores_only_query_key(self, tmp_path):
        heads = HydraHeads.init(BIG, 0)
        export_heads(heads, tmp_path / "h.ckpt")
        ckpt = load_checkpoint(tmp_path / "h.ckpt")
        assert set(ckpt.tensors) == set(HEAD_PARAM_NAMES)
        assert ckpt.n_reals == 2 * 128 * 128 + 2 * 128 == 33024

    def test_size_close_to_shapes(self, tmp_path):
        n = export_heads(HydraHeads.init(BIG, 0), tmp_path / "h.ckpt")
        assert abs(n - 4 * 33024) <= 0.05 * 4 * 33024
        assert n == (tmp_path / "h.ckpt").stat().st_size

    def test_much_smaller_than_full_model(self, tmp_path):
        heads = HydraHeads.init(BIG, 0)
        body = init_model(BIG, 0)
        small = export_heads(heads, tmp_path / "h.ckpt")
        full = save_model(tmp_path / "m.ckpt", attach_hydra(body, heads, 0, num_outputs=2),
                          vocab_of(BIG.vocab_size), {"kind": "classification"})
        assert small < 0.10 * full

    def test_load_round_trip(self, tmp_path, tiny_cfg):
        heads = HydraHeads.init(tiny_cfg, 3, bound=1.0)
        export_heads(heads, tmp_path / "h.ckpt")
        back = load_heads(tmp_path / "h.ckpt", tiny_cfg)
        for a, b in zip(heads.parameters(), back.parameters()):
            assert a.name == b.name
            assert np.array_equal(b.data, a.data.astype(np.float32))
        export_heads(back, tmp_path / "h2.ckpt")
        assert (tmp_path / "h.ckpt").read_bytes() == (tmp_path / "h2.ckpt").read_bytes()

    def test_geometry_mismatch(self, tmp_path, tiny_cfg):
        export_heads(HydraHeads.init(tiny_cfg, 0), tmp_path / "h.ckpt")
        other = ModelConfig(vocab_size=30, d_model=8, n_heads=4)
        with pytest.raises(CompatibilityError, match="n_heads"):
            load_heads(tmp_path / "h.ckpt", other)

    def test_body_is_not_heads(self, tmp_path, tiny_body):
        save_body(tmp_path / "b.ckpt", tiny_body, vocab_of(30))
        with pytest.raises(CompatibilityError):
            load_heads(tmp_path / "b.ckpt")


class TestBodyAndModel:
    def test_body_round_trip(self, tmp_path, tiny_body):
        vocab = vocab_of(30)
        save_body(tmp_path / "b.ckpt", tiny_body, vocab)
        body, back_vocab = load_body(tmp_path / "b.ckpt")
        assert back_vocab.itos == vocab.itos
        save_body(tmp_path / "b2.ckpt", body, back_vocab)
        assert (tmp_path / "b.ckpt").read_bytes() == (tmp_path / "b2.ckpt").read_bytes()

    def test_vocab_size_checked(self, tmp_path, tiny_body):
        save_body(tmp_path / "b.ckpt", tiny_body, vocab_of(20))
        with pytest.raises(CompatibilityError):
            load_body(tmp_path / "b.ckpt")

    @pytest.mark.parametrize("with_hydra", [False, True])
    def test_model_round_trip(self, tmp_path, tiny_body, tiny_cfg, with_hydra):
        if with_hydra:
            model = attach_hydra(tiny_body, HydraHeads.init(tiny_cfg, 0), 0, num_outputs=2)
        else:
            model = baseline_model(tiny_body, 0, num_outputs=2)
        save_model(tmp_path / "m.ckpt", model, vocab_of(30), {"kind": "classification"})
        back, _, task = load_model(tmp_path / "m.ckpt")
        assert task == {"kind": "classification"}
        assert back.n_layers == model.n_layers
        save_model(tmp_path / "m2.ckpt", back, vocab_of(30), task)
        assert (tmp_path / "m.ckpt").read_bytes() == (tmp_path / "m2.ckpt").read_bytes()
