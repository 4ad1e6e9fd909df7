import random
from decimal import Decimal

import pytest
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes
from hypothesis import given, settings
from hypothesis import strategies as st

from cipherdb import REGISTRY, CipherValue, PlainValue, SymKey, decrypt, encrypt_det, encrypt_prob, wipe
from cipherdb.cipher import DETERMINISTIC, PROBABILISTIC, LogicalType, decrypt_numeric_batch, encrypt
from cipherdb.errors import CiphertextMalformed, KeyMalformed, RngFailure, ValueMalformed

K = SymKey(bytes(range(32)))


def aes_ecb(key: bytes, block: bytes) -> bytes:
    enc = Cipher(algorithms.AES(key), modes.ECB()).encryptor()
    return enc.update(block) + enc.finalize()


def test_det_numeric_layout_matches_reference_block():
    cv = encrypt_det(K, PlainValue.of("int64", 123))
    ref = aes_ecb(bytes(range(32)), bytes(8) + (123).to_bytes(8, "big"))
    assert cv.blocks == ref
    assert cv.plain_len == 8 and cv.block_count == 1


def test_det_varchar_is_space_padded():
    cv = encrypt_det(K, PlainValue.of("varchar", "ABCDEFGHIJKLMNOPQR"))
    assert cv.plain_len == 18 and cv.block_count == 2
    second = aes_ecb(bytes(range(32)), b"QR" + b" " * 14)
    assert cv.block_list[1] == second


def test_prob_block_has_salt_left_payload_right():
    salt = bytes([7] * 8)
    cv = encrypt_prob(K, PlainValue.of("int64", 500), rng=lambda n: salt * (n // 8))
    assert cv.block_count == 1 and cv.nbytes == 16 and cv.plain_len == 8
    assert cv.blocks == aes_ecb(bytes(range(32)), salt + (500).to_bytes(8, "big"))


def test_block_counts():
    assert encrypt_prob(K, PlainValue.of("varchar", "x" * 20)).block_count == 3
    assert encrypt_det(K, PlainValue.of("varchar", "")).block_count == 1
    assert encrypt_prob(K, PlainValue.of("varchar", "")).block_count == 1


def test_determinism_and_distinctness():
    a = encrypt_det(K, PlainValue.of("int64", 123))
    assert a == encrypt_det(K, PlainValue.of("int64", 123))
    assert a != encrypt_det(K, PlainValue.of("int64", 124))


def test_examples_roundtrip():
    assert decrypt(K, encrypt_det(K, PlainValue.of("int64", 0)), "int64").value() == 0
    assert decrypt(K, encrypt_prob(K, PlainValue.of("int64", -1)), "int64").value() == -1
    d = decrypt(K, encrypt_prob(K, PlainValue.of("decimal(2)", "-12.34")), "decimal(2)").value()
    assert d == Decimal("-12.34")


def test_trailing_spaces_survive():
    for mode in (DETERMINISTIC, PROBABILISTIC):
        cv = encrypt(K, PlainValue.of("varchar", "ab  "), mode)
        assert decrypt(K, cv, "varchar").value() == "ab  "
        assert cv != encrypt(K, PlainValue.of("varchar", "ab"), mode)


def test_prob_freshness_10k():
    pv = PlainValue.of("int64", 60520)
    seen = {encrypt_prob(K, pv).blocks for _ in range(10_000)}
    assert len(seen) == 10_000


def test_roundtrip_10k_random():
    rng = random.Random(1)
    key = SymKey.generate()
    for i in range(10_000):
        kind = i % 3
        if kind == 0:
            lt, v = "int64", rng.randint(-(2**63), 2**63 - 1)
        elif kind == 1:
            lt, v = "decimal(3)", Decimal(rng.randint(-(10**15), 10**15)).scaleb(-3)
        else:
            lt, v = "varchar", "".join(rng.choice("ab é\t") for _ in range(rng.randint(0, 40)))
        mode = DETERMINISTIC if i % 2 else PROBABILISTIC
        assert decrypt(key, encrypt(key, PlainValue.of(lt, v), mode), lt).value() == v


@settings(max_examples=200, deadline=None)
@given(st.integers(-(2**63), 2**63 - 1), st.integers(-(2**63), 2**63 - 1))
def test_det_equality_preserved(x, y):
    a = encrypt_det(K, PlainValue.of("int64", x))
    b = encrypt_det(K, PlainValue.of("int64", y))
    assert (a == b) == (x == y)


@settings(max_examples=100, deadline=None)
@given(st.binary(min_size=32, max_size=32), st.binary(min_size=32, max_size=32), st.integers(-(2**63), 2**63 - 1))
def test_wrong_key_gives_garbage(k1, k2, v):
    if k1 == k2:
        return
    cv = encrypt_det(SymKey(k1), PlainValue.of("int64", v))
    assert decrypt(SymKey(k2), cv, "int64").value() != v


@settings(max_examples=200, deadline=None)
@given(st.text(max_size=60), st.sampled_from([DETERMINISTIC, PROBABILISTIC]))
def test_size_law(text, mode):
    pv = PlainValue.of("varchar", text)
    cv = encrypt(K, pv, mode)
    n = len(text.encode())
    per = 16 if mode == DETERMINISTIC else 8
    assert cv.block_count == max(1, -(-n // per))
    assert CipherValue.from_bytes(cv.to_bytes(), mode) == cv


def test_prob_bytes_double_det_for_numeric():
    pv = PlainValue.of("int64", 42)
    # one 16-byte block either way: the numeric payload fits half a block
    assert encrypt_prob(K, pv).nbytes == encrypt_det(K, pv).nbytes == 16


def test_batch_decrypt_matches_single():
    vals = list(range(-50, 50))
    cvs = [encrypt_prob(K, PlainValue.of("int64", v)) for v in vals]
    assert decrypt_numeric_batch(K, cvs, "int64") == vals


def test_errors():
    with pytest.raises(KeyMalformed):
        SymKey(b"short")
    with pytest.raises(KeyMalformed):
        SymKey.from_hex("zz" * 32)
    with pytest.raises(ValueMalformed):
        PlainValue.of("int64", 2**63)
    with pytest.raises(ValueMalformed):
        PlainValue.of("decimal(2)", "1.234")
    bad = CipherValue(DETERMINISTIC, 40, bytes(16))
    with pytest.raises(CiphertextMalformed):
        decrypt(K, bad, "varchar")
    with pytest.raises(CiphertextMalformed):
        decrypt(K, encrypt_det(K, PlainValue.of("varchar", "abc")), "int64")

    def broken(n):
        raise OSError("no entropy")

    with pytest.raises(RngFailure):
        encrypt_prob(K, PlainValue.of("int64", 1), rng=broken)
    with pytest.raises(RngFailure):
        encrypt_prob(K, PlainValue.of("int64", 1), rng=lambda n: b"x")


def test_wipe_key_and_idempotence():
    key = SymKey.generate()
    REGISTRY.register(key.material)
    before = REGISTRY.count
    wipe(key)
    assert bytes(key.material) == bytes(32)
    assert REGISTRY.count == before - 1
    wipe(key)
    assert bytes(key.material) == bytes(32)
    with pytest.raises(KeyMalformed):
        encrypt_det(key, PlainValue.of("int64", 1))


def test_wipe_buffer_and_plainvalue():
    buf = REGISTRY.register(bytearray(b"secret"))
    wipe(buf)
    assert buf == bytearray(6) and not REGISTRY.is_registered(buf)
    pv = PlainValue.of("varchar", "hello")
    wipe(pv)
    assert bytes(pv.payload) == bytes(5)
    with pytest.raises(TypeError):
        wipe(b"immutable")


def test_key_repr_hides_material():
    key = SymKey.from_hex("ab" * 32)
    assert "ab" * 4 not in repr(key)


def test_logical_type_parse():
    assert LogicalType.parse("BIGINT").kind == "int64"
    assert LogicalType.parse("decimal(4)").scale == 4
    with pytest.raises(ValueMalformed):
        LogicalType.parse("float")
