import hashlib
import struct

import pytest
from hypothesis import given, strategies as st

from rlchain.crypto import Keypair
from rlchain.encoding import EMPTY_SHA256, MAX_FIELD, Reader, Writer
from rlchain.errors import SerializationError
from rlchain.model import EventResult, EventType, Role
from rlchain.tx import (
    RecordEvent,
    RegisterStakeholder,
    Transaction,
    canonical_serialize,
    deserialize,
    make_tx,
    tx_hash,
)

SENDER = Keypair.from_seed("golden-sender")
CP = bytes(range(32))
DETAIL = bytes([0xAB]) * 32


def golden_tx() -> Transaction:
    ev = RecordEvent("SN-42", EventType.DATA_WIPE, CP, EventResult.PASS, DETAIL)
    return Transaction(ev, 7, SENDER.public)


def hand_encoded_unsigned() -> bytes:
    # tag, serial, event type, counterparty flag + key, result, detail, replacement flag, nonce, sender
    return (struct.pack(">B", 3)
            + struct.pack(">I", 5) + b"SN-42"
            + struct.pack(">B", 5)
            + b"\x01" + CP
            + struct.pack(">B", 1)
            + DETAIL
            + b"\x00"
            + struct.pack(">Q", 7)
            + SENDER.public)


# Frozen from the struct encoding above (first computed once, then pinned).
GOLDEN_UNSIGNED_SHA256 = "2d820dedb55c966abbad1563dfbee033f9747841f9b609835199c782c9085504"


def test_record_event_golden_vector():
    tx = golden_tx()
    assert tx.unsigned_bytes() == hand_encoded_unsigned()
    assert hashlib.sha256(tx.unsigned_bytes()).hexdigest() == GOLDEN_UNSIGNED_SHA256


def test_serialization_deterministic_and_round_trips():
    a = make_tx(golden_tx().payload, SENDER, 7, 99)
    b = make_tx(golden_tx().payload, SENDER, 7, 99)
    assert canonical_serialize(a) == canonical_serialize(b)
    assert deserialize(canonical_serialize(a)) == a


def test_empty_text_field_is_four_zero_bytes():
    raw = RegisterStakeholder(CP, Role.RETAILER, "")
    tx = Transaction(raw, 1, SENDER.public)
    body = tx.unsigned_bytes()
    # tag(1) + candidate(32) + role(1) then the length prefix
    assert body[34:38] == b"\x00\x00\x00\x00"


def test_empty_sha256():
    assert EMPTY_SHA256.hex() == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
    assert EMPTY_SHA256 == hashlib.sha256(b"").digest()


@given(st.integers(min_value=0, max_value=10_000))
def test_tx_hash_bit_flip_changes_hash(bit):
    tx = make_tx(golden_tx().payload, SENDER, 7, 1)
    raw = bytearray(canonical_serialize(tx))
    bit %= len(raw) * 8
    before = tx_hash(tx)
    assert before == hashlib.sha256(bytes(raw)).digest()
    raw[bit // 8] ^= 1 << (bit % 8)
    assert hashlib.sha256(bytes(raw)).digest() != before


def test_reader_rejects_trailing_bytes_and_bad_flags():
    raw = canonical_serialize(make_tx(golden_tx().payload, SENDER, 7, 1))
    with pytest.raises(SerializationError):
        deserialize(raw + b"\x00")
    with pytest.raises(SerializationError):
        deserialize(raw[:-1])
    bad = bytearray(raw)
    bad[1 + 4 + 5 + 1] = 2  # counterparty presence flag
    with pytest.raises(SerializationError):
        deserialize(bytes(bad))


def test_field_cap():
    with pytest.raises(SerializationError):
        Writer().var(b"x" * (MAX_FIELD + 1))
    r = Reader(struct.pack(">I", MAX_FIELD + 1) + b"x" * 10)
    with pytest.raises(SerializationError):
        r.var()


def test_unknown_tag_rejected():
    raw = bytearray(canonical_serialize(make_tx(golden_tx().payload, SENDER, 7, 1)))
    raw[0] = 0xEE
    with pytest.raises(SerializationError):
        deserialize(bytes(raw))
