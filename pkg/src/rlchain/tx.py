"""Signed transactions and their canonical byte encoding.

Layout: ``tag u8 | payload fields in schema order | nonce u64 | sender[32] |
signature[64]``. The signature covers a domain preamble carrying the chain
id followed by every byte before the signature, so a transaction signed for
one chain never verifies on another.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from enum import IntEnum
from typing import Optional, Union

from rlchain.crypto import Keypair, verify
from rlchain.encoding import (
    HASH_LEN,
    KEY_LEN,
    SIG_LEN,
    Reader,
    Writer,
    sha256,
)
from rlchain.errors import SerializationError
from rlchain.model import (
    MAX_NAME,
    MAX_SERIAL,
    Classification,
    ComponentType,
    EventResult,
    EventType,
    Role,
)

TX_DOMAIN = b"RLCHAIN/TX/v1\x00"


class TxType(IntEnum):
    REGISTER_STAKEHOLDER = 1
    REGISTER_DEVICE = 2
    RECORD_EVENT = 3
    CLASSIFY_DEVICE = 4
    ANCHOR_TOC = 5


def _enum(cls, value: int, what: str):
    try:
        return cls(value)
    except ValueError as exc:
        raise SerializationError(f"unknown {what} {value}") from exc


@dataclass(frozen=True)
class ComponentSpec:
    component_type: ComponentType
    serial: str
    feature_info_hash: bytes

    def write(self, w: Writer) -> None:
        w.u8(self.component_type).text(self.serial, MAX_SERIAL).fixed(self.feature_info_hash, HASH_LEN)

    @classmethod
    def read(cls, r: Reader) -> "ComponentSpec":
        return cls(_enum(ComponentType, r.u8(), "component type"), r.text(MAX_SERIAL), r.fixed(HASH_LEN))


@dataclass(frozen=True)
class RegisterStakeholder:
    candidate: bytes
    role: Role
    display_name: str

    tx_type = TxType.REGISTER_STAKEHOLDER

    def write(self, w: Writer) -> None:
        w.fixed(self.candidate, KEY_LEN).u8(self.role).text(self.display_name, MAX_NAME)

    @classmethod
    def read(cls, r: Reader) -> "RegisterStakeholder":
        return cls(r.fixed(KEY_LEN), _enum(Role, r.u8(), "role"), r.text(MAX_NAME))


@dataclass(frozen=True)
class RegisterDevice:
    serial: str
    model: str
    original_manufacturer: bytes
    components: tuple[ComponentSpec, ...]

    tx_type = TxType.REGISTER_DEVICE

    def write(self, w: Writer) -> None:
        w.text(self.serial, MAX_SERIAL).text(self.model, MAX_NAME).fixed(self.original_manufacturer, KEY_LEN)
        w.u32(len(self.components))
        for c in self.components:
            c.write(w)

    @classmethod
    def read(cls, r: Reader) -> "RegisterDevice":
        serial, model, maker = r.text(MAX_SERIAL), r.text(MAX_NAME), r.fixed(KEY_LEN)
        n = r.u32()
        if n > 64:
            raise SerializationError("too many components")
        return cls(serial, model, maker, tuple(ComponentSpec.read(r) for _ in range(n)))


@dataclass(frozen=True)
class Replacement:
    old_serial: str
    new: ComponentSpec


@dataclass(frozen=True)
class RecordEvent:
    device_serial: str
    event_type: EventType
    counterparty: Optional[bytes]
    result: EventResult
    detail_hash: bytes
    replacement: Optional[Replacement] = None

    tx_type = TxType.RECORD_EVENT

    def write(self, w: Writer) -> None:
        w.text(self.device_serial, MAX_SERIAL).u8(self.event_type)
        w.flag(self.counterparty is not None)
        if self.counterparty is not None:
            w.fixed(self.counterparty, KEY_LEN)
        w.u8(self.result).fixed(self.detail_hash, HASH_LEN)
        w.flag(self.replacement is not None)
        if self.replacement is not None:
            w.text(self.replacement.old_serial, MAX_SERIAL)
            self.replacement.new.write(w)

    @classmethod
    def read(cls, r: Reader) -> "RecordEvent":
        serial = r.text(MAX_SERIAL)
        event_type = _enum(EventType, r.u8(), "event type")
        counterparty = r.fixed(KEY_LEN) if r.flag() else None
        result = _enum(EventResult, r.u8(), "result")
        detail = r.fixed(HASH_LEN)
        replacement = None
        if r.flag():
            old = r.text(MAX_SERIAL)
            replacement = Replacement(old, ComponentSpec.read(r))
        return cls(serial, event_type, counterparty, result, detail, replacement)


@dataclass(frozen=True)
class ClassifyDevice:
    device_serial: str
    classification: Classification
    detail_hash: bytes

    tx_type = TxType.CLASSIFY_DEVICE

    def write(self, w: Writer) -> None:
        w.text(self.device_serial, MAX_SERIAL).u8(self.classification).fixed(self.detail_hash, HASH_LEN)

    @classmethod
    def read(cls, r: Reader) -> "ClassifyDevice":
        return cls(r.text(MAX_SERIAL), _enum(Classification, r.u8(), "classification"), r.fixed(HASH_LEN))


@dataclass(frozen=True)
class AnchorToc:
    toc_length: int
    toc_root: bytes

    tx_type = TxType.ANCHOR_TOC

    def write(self, w: Writer) -> None:
        w.u64(self.toc_length).fixed(self.toc_root, HASH_LEN)

    @classmethod
    def read(cls, r: Reader) -> "AnchorToc":
        return cls(r.u64(), r.fixed(HASH_LEN))


Payload = Union[RegisterStakeholder, RegisterDevice, RecordEvent, ClassifyDevice, AnchorToc]

PAYLOADS = {
    TxType.REGISTER_STAKEHOLDER: RegisterStakeholder,
    TxType.REGISTER_DEVICE: RegisterDevice,
    TxType.RECORD_EVENT: RecordEvent,
    TxType.CLASSIFY_DEVICE: ClassifyDevice,
    TxType.ANCHOR_TOC: AnchorToc,
}


@dataclass(frozen=True)
class Transaction:
    payload: Payload
    nonce: int
    sender: bytes
    signature: bytes = bytes(SIG_LEN)

    @property
    def tx_type(self) -> TxType:
        return self.payload.tx_type

    def unsigned_bytes(self) -> bytes:
        w = Writer().u8(self.payload.tx_type)
        self.payload.write(w)
        w.u64(self.nonce).fixed(self.sender, KEY_LEN)
        return w.getvalue()

    def signing_message(self, chain_id: int) -> bytes:
        return TX_DOMAIN + chain_id.to_bytes(8, "big") + self.unsigned_bytes()

    def signed(self, key: Keypair, chain_id: int) -> "Transaction":
        if key.public != self.sender:
            raise ValueError("signing key does not match sender")
        return replace(self, signature=key.sign(self.signing_message(chain_id)))

    def verify(self, chain_id: int) -> bool:
        try:
            msg = self.signing_message(chain_id)
        except SerializationError:
            return False
        return verify(self.sender, msg, self.signature)


def canonical_serialize(tx: Transaction) -> bytes:
    if len(tx.signature) != SIG_LEN:
        raise SerializationError("signature must be 64 bytes")
    return tx.unsigned_bytes() + tx.signature


def deserialize(data: bytes) -> Transaction:
    r = Reader(data)
    tag = _enum(TxType, r.u8(), "transaction type")
    payload = PAYLOADS[tag].read(r)
    tx = Transaction(payload, r.u64(), r.fixed(KEY_LEN), r.fixed(SIG_LEN))
    r.done()
    return tx


def tx_hash(tx: Transaction) -> bytes:
    return sha256(canonical_serialize(tx))


def make_tx(payload: Payload, key: Keypair, nonce: int, chain_id: int) -> Transaction:
    return Transaction(payload, nonce, key.public).signed(key, chain_id)


def _jsonable(value):
    if isinstance(value, (bytes, bytearray)):
        return value.hex()
    if isinstance(value, IntEnum):
        return value.name
    if isinstance(value, tuple):
        return [_jsonable(v) for v in value]
    if hasattr(value, "__dataclass_fields__"):
        return {k: _jsonable(getattr(value, k)) for k in value.__dataclass_fields__}
    return value


def tx_to_json(tx: Transaction) -> dict:
    return {
        "tx_type": tx.tx_type.name,
        "tx_hash": tx_hash(tx).hex(),
        "sender": tx.sender.hex(),
        "nonce": tx.nonce,
        "payload": _jsonable(tx.payload),
        "hex": canonical_serialize(tx).hex(),
    }
