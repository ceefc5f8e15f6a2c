import numpy as np
import pytest

from kvsqueeze import (
    CompactTrace,
    PrefillTrace,
    TraceFormatError,
    load_trace,
    profile_layers,
    save_trace,
)
from kvsqueeze.traceio import MAGIC


def _toy_trace(seed=0, n_layer=3, prompt_len=5, d_model=8):
    rng = np.random.default_rng(seed)
    return PrefillTrace(
        n_layer=n_layer, d_model=d_model, prompt_len=prompt_len,
        pre=rng.normal(size=(n_layer, prompt_len, d_model)).astype(np.float32),
        post=rng.normal(size=(n_layer, prompt_len, d_model)).astype(np.float32),
    )


def test_full_round_trip_bit_identical(tmp_path):
    trace = _toy_trace(seed=42)
    path = tmp_path / "t.sqztrc"
    save_trace(trace, path)
    loaded = load_trace(path)
    assert isinstance(loaded, PrefillTrace)
    assert np.array_equal(loaded.pre, trace.pre)
    assert np.array_equal(loaded.post, trace.post)
    assert (loaded.n_layer, loaded.d_model, loaded.prompt_len) == (3, 8, 5)


def test_compact_round_trip(tmp_path):
    trace = _toy_trace(seed=1)
    path = tmp_path / "c.sqztrc"
    save_trace(trace, path, compact=True)
    loaded = load_trace(path)
    assert isinstance(loaded, CompactTrace)
    assert loaded.cosines.shape == (3, 5)


def test_compact_profiles_identical_to_full(tmp_path):
    trace = _toy_trace(seed=2)
    full_path = tmp_path / "full.sqztrc"
    compact_path = tmp_path / "compact.sqztrc"
    save_trace(trace, full_path)
    save_trace(trace, compact_path, compact=True)
    full_profile = profile_layers(load_trace(full_path))
    compact_profile = profile_layers(load_trace(compact_path))
    assert full_profile.mean_cos == compact_profile.mean_cos  # bit-identical


def test_wrong_magic(tmp_path):
    path = tmp_path / "bad.sqztrc"
    trace = _toy_trace()
    save_trace(trace, path)
    raw = bytearray(path.read_bytes())
    raw[:8] = b"NOTATRCE"
    path.write_bytes(bytes(raw))
    with pytest.raises(TraceFormatError, match="magic"):
        load_trace(path)


def test_truncation_names_lengths(tmp_path):
    path = tmp_path / "trunc.sqztrc"
    save_trace(_toy_trace(), path)
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) - 16])
    with pytest.raises(TraceFormatError, match=rf"expected {len(raw)} bytes, got {len(raw) - 16}"):
        load_trace(path)


def test_header_only_file(tmp_path):
    path = tmp_path / "hdr.sqztrc"
    path.write_bytes(MAGIC)
    with pytest.raises(TraceFormatError, match="shorter"):
        load_trace(path)


def test_unknown_flags(tmp_path):
    path = tmp_path / "flags.sqztrc"
    save_trace(_toy_trace(), path)
    raw = bytearray(path.read_bytes())
    raw[20] |= 0x80  # flags field, high bit
    path.write_bytes(bytes(raw))
    with pytest.raises(TraceFormatError, match="flag"):
        load_trace(path)


def test_zero_dimension_header(tmp_path):
    path = tmp_path / "dims.sqztrc"
    save_trace(_toy_trace(), path)
    raw = bytearray(path.read_bytes())
    raw[8:12] = (0).to_bytes(4, "little")  # n_layer = 0
    path.write_bytes(bytes(raw))
    with pytest.raises(TraceFormatError, match="inconsistent header"):
        load_trace(path)


def test_nan_payload_rejected(tmp_path):
    trace = _toy_trace()
    trace.post[1, 1, 1] = np.nan
    path = tmp_path / "nan.sqztrc"
    with pytest.raises(Exception, match="NaN"):
        save_trace(trace, path)
