import struct

import numpy as np
import pytest

from siamese_eeg import checkpoint as ck
from siamese_eeg.encoder import AdamState, Architecture, init_params
from siamese_eeg.errors import FormatError

from conftest import TINY


def _state(params, rng):
    return AdamState({k: rng.standard_normal(v.shape) for k, v in params.items()},
                     {k: rng.random(v.shape) for k, v in params.items()}, 17)


def test_roundtrip_params_only():
    p = init_params(TINY, seed=1)
    back, state = ck.decode_checkpoint(ck.encode_checkpoint(p), TINY)
    assert state is None
    assert list(back) == list(p)
    for k in p:
        assert back[k].tobytes() == p[k].tobytes()


def test_roundtrip_with_adam_state(tmp_path, rng):
    p = init_params(TINY, seed=2)
    s = _state(p, rng)
    ck.save_checkpoint(tmp_path / "m.smne", p, s)
    back, state = ck.load_checkpoint(tmp_path / "m.smne", TINY)
    assert state.t == 17
    for k in p:
        assert back[k].tobytes() == p[k].tobytes()
        assert state.m[k].tobytes() == s.m[k].tobytes()
        assert state.v[k].tobytes() == s.v[k].tobytes()


def test_layout():
    p = init_params(TINY, seed=0)
    raw = ck.encode_checkpoint(p)
    assert raw[:4] == b"SMNE"
    assert struct.unpack_from("<H", raw, 4) == (1,)
    assert struct.unpack_from("<B4I", raw, 6) == (4, 4, 5, 5, 1)
    first = np.frombuffer(raw, dtype="<f8", count=100, offset=6 + 1 + 16)
    np.testing.assert_array_equal(first, p["conv1.kernels"].ravel())
    n_tensors = len(p)
    ranks = sum(v.ndim for v in p.values())
    assert len(raw) == 6 + n_tensors + 4 * ranks + 8 * p.num_values()


def test_encoding_is_deterministic():
    p = init_params(TINY, seed=4)
    assert ck.encode_checkpoint(p) == ck.encode_checkpoint(p.copy())


@pytest.mark.parametrize("mutate,offset", [
    (lambda b: b"XXXX" + b[4:], 0),
    (lambda b: b[:4] + struct.pack("<H", 2) + b[6:], 4),
])
def test_header_errors_carry_offsets(mutate, offset):
    raw = ck.encode_checkpoint(init_params(TINY))
    with pytest.raises(FormatError) as info:
        ck.decode_checkpoint(mutate(raw), TINY)
    assert info.value.offset == offset


def test_truncation_and_trailing_bytes(rng):
    p = init_params(TINY)
    raw = ck.encode_checkpoint(p)
    with pytest.raises(FormatError, match="truncated"):
        ck.decode_checkpoint(raw[:-3], TINY)
    full = ck.encode_checkpoint(p, _state(p, rng))
    with pytest.raises(FormatError, match="truncated"):
        ck.decode_checkpoint(full[:-8], TINY)
    with pytest.raises(FormatError):
        ck.decode_checkpoint(full + b"\x00", TINY)


def test_architecture_mismatch_is_format_error():
    raw = ck.encode_checkpoint(init_params(TINY))
    with pytest.raises(FormatError, match="shape"):
        ck.decode_checkpoint(raw, Architecture())
