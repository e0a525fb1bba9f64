"""Independent reference models used by the property and acceptance tests.

Nothing here imports rule tables from the package: the permission matrix and
lifecycle rules are restated from the written requirements, and device state
is recomputed from scratch from the full accepted history at every step
(brute force) rather than updated incrementally.
"""
from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Optional

from rlchain.crypto import Keypair
from rlchain.encoding import ZERO_HASH, sha256
from rlchain.model import Classification, ComponentType, EventResult, EventType, Role
from rlchain.registry import Registry
from rlchain.tx import (
    ClassifyDevice,
    ComponentSpec,
    RecordEvent,
    RegisterDevice,
    RegisterStakeholder,
    Replacement,
)

E = EventType
R = Role

# Normative role x event matrix, restated by hand.
MATRIX = {
    E.COLLECTION: {R.RETAILER},
    E.CUSTODY_TRANSFER: {R.RETAILER, R.THIRD_PARTY_LOGISTICS, R.MANUFACTURER, R.REFURBISHER},
    E.INSPECTION: {R.MANUFACTURER, R.REFURBISHER, R.RETAILER},
    E.PHYSICAL_CONDITION_ANALYSIS: {R.MANUFACTURER, R.REFURBISHER, R.RETAILER},
    E.DATA_WIPE: {R.MANUFACTURER, R.REFURBISHER, R.RETAILER},
    E.FUNCTIONAL_TEST: {R.MANUFACTURER, R.REFURBISHER, R.RETAILER},
    E.CUSTOMIZATION_REMOVAL: {R.MANUFACTURER, R.REFURBISHER, R.RETAILER},
    E.REPAIR: {R.MANUFACTURER, R.REFURBISHER, R.RETAILER},
    E.COMPONENT_REPLACEMENT: {R.MANUFACTURER, R.REFURBISHER, R.RETAILER},
    E.CLASSIFICATION: {R.MANUFACTURER, R.REFURBISHER, R.RETAILER},  # REFURBISHED; REMANUFACTURED is maker-only
    E.SALE: {R.RETAILER, R.MANUFACTURER, R.REFURBISHER},
    E.DONATION: {R.RETAILER, R.MANUFACTURER, R.REFURBISHER},
}
PROCESSING = [E.INSPECTION, E.PHYSICAL_CONDITION_ANALYSIS, E.DATA_WIPE, E.FUNCTIONAL_TEST,
              E.CUSTOMIZATION_REMOVAL, E.REPAIR, E.COMPONENT_REPLACEMENT]
HOLDERS = {R.RETAILER, R.THIRD_PARTY_LOGISTICS, R.MANUFACTURER, R.REFURBISHER}

SERIAL = "D1"
REGISTRAR = Keypair.from_seed("oracle-registrar")
CAST: dict[str, tuple[Keypair, Optional[Role]]] = {
    **{role.name: (Keypair.from_seed(f"oracle-{role.name}"), role) for role in Role},
    "MAKER2": (Keypair.from_seed("oracle-maker-2"), R.MANUFACTURER),
    "REFURB2": (Keypair.from_seed("oracle-refurb-2"), R.REFURBISHER),
    "RETAIL2": (Keypair.from_seed("oracle-retail-2"), R.RETAILER),
    "NOBODY": (Keypair.from_seed("oracle-unregistered"), None),
}
NAMES = list(CAST)
MAKER = "MANUFACTURER"
INITIAL_BOM = {ct: f"{SERIAL}-{ct.name}" for ct in ComponentType}


def role_of(name: Optional[str]) -> Optional[Role]:
    return CAST[name][1] if name is not None else None


@dataclass(frozen=True)
class Ev:
    kind: EventType
    actor: str
    counterparty: Optional[str] = None
    result: EventResult = EventResult.NA
    zero_detail: bool = False
    classification: Classification = Classification.NONE
    via_record: bool = False            # CLASSIFICATION pushed through record_event
    old_serial: Optional[str] = None    # replacement fields; old_serial None means no replacement
    new_type: Optional[ComponentType] = None
    new_serial: Optional[str] = None
    detail_salt: int = 0

    @property
    def has_replacement(self) -> bool:
        return self.old_serial is not None


# -- brute-force judge -----------------------------------------------------------

@dataclass
class Derived:
    state: str
    custodian: str
    installed: dict
    ever: set


def derive(history: list[Ev]) -> Derived:
    """Recompute state, custodian and components from the whole history."""
    state, custodian = "REGISTERED", MAKER
    installed = dict(INITIAL_BOM)
    ever = set(INITIAL_BOM.values())
    for ev in history:
        if ev.kind == E.COLLECTION:
            state, custodian = "COLLECTED", ev.actor
        elif ev.kind == E.CUSTODY_TRANSFER:
            custodian = ev.counterparty
            if state != "PROCESSED":
                state = "IN_TRANSIT" if role_of(ev.counterparty) == R.THIRD_PARTY_LOGISTICS else "COLLECTED"
        elif ev.kind in PROCESSING:
            state = "IN_PROCESS"
            if ev.kind == E.COMPONENT_REPLACEMENT:
                ctype = next((t for t, s in installed.items() if s == ev.old_serial), None)
                if ctype is not None:  # only ever false for raw, unvalidated prefixes
                    installed[ctype] = ev.new_serial
                if ev.new_serial:
                    ever.add(ev.new_serial)
        elif ev.kind == E.CLASSIFICATION:
            state = "PROCESSED"
        elif ev.kind in (E.SALE, E.DONATION):
            state, custodian = "FINALIZED", ev.counterparty
    return Derived(state, custodian, installed, ever)


def judge(history: list[Ev], ev: Ev) -> bool:
    """Would a correct registry accept ``ev`` after the accepted ``history``?"""
    d = derive(history)
    kinds = [h.kind for h in history]
    actor_role = role_of(ev.actor)
    cp_role = role_of(ev.counterparty)

    if ev.zero_detail or actor_role is None:
        return False
    if d.state == "FINALIZED":
        return False
    if ev.kind == E.CLASSIFICATION:
        if ev.via_record:
            return False
        if ev.classification == Classification.NONE:
            return False
        if ev.classification == Classification.REMANUFACTURED and ev.actor != MAKER:
            return False
        if ev.classification == Classification.REFURBISHED and actor_role not in MATRIX[E.CLASSIFICATION]:
            return False
    elif actor_role not in MATRIX[ev.kind]:
        return False
    if ev.kind != E.COLLECTION and ev.actor != d.custodian:
        return False
    if ev.has_replacement and ev.kind != E.COMPONENT_REPLACEMENT:
        return False

    def counterparty_ok(allowed) -> bool:
        return cp_role is not None and cp_role in allowed and ev.counterparty != ev.actor

    if ev.kind == E.COLLECTION:
        return d.state == "REGISTERED" and counterparty_ok({R.CUSTOMER})
    if ev.kind == E.CUSTODY_TRANSFER:
        return d.state in ("COLLECTED", "IN_TRANSIT", "PROCESSED") and counterparty_ok(HOLDERS)
    if ev.kind in PROCESSING:
        if d.state not in ("COLLECTED", "IN_PROCESS") or ev.counterparty is not None:
            return False
        if E.INSPECTION not in kinds and ev.kind != E.INSPECTION:
            return False
        if ev.kind == E.FUNCTIONAL_TEST and ev.result == EventResult.NA:
            return False
        if ev.kind == E.COMPONENT_REPLACEMENT:
            if not ev.has_replacement or ev.old_serial not in d.installed.values():
                return False
            old_type = next(t for t, s in d.installed.items() if s == ev.old_serial)
            return ev.new_type == old_type and bool(ev.new_serial) and ev.new_serial not in d.ever
        return True
    if ev.kind == E.CLASSIFICATION:
        if d.state != "IN_PROCESS":
            return False
        if not {E.INSPECTION, E.PHYSICAL_CONDITION_ANALYSIS, E.DATA_WIPE} <= set(kinds):
            return False
        fixes = [i for i, k in enumerate(kinds) if k in (E.REPAIR, E.COMPONENT_REPLACEMENT)]
        tail = history[fixes[-1] + 1:] if fixes else history
        return any(h.kind == E.FUNCTIONAL_TEST and h.result == EventResult.PASS for h in tail)
    if ev.kind in (E.SALE, E.DONATION):
        return (d.state == "PROCESSED" and E.DATA_WIPE in kinds
                and counterparty_ok(set(Role) - {R.GOVERNMENT}))
    return False


def judge_sequence(events: list[Ev]) -> bool:
    """True iff every event is valid given all events before it."""
    return all(judge(events[:i], ev) for i, ev in enumerate(events))


# -- random histories -----------------------------------------------------------

def _pick(rng: random.Random, names) -> str:
    return rng.choice(list(names))


def guided(rng: random.Random, history: list[Ev]) -> Ev:
    """A plausible next step: usually, but not always, a valid one."""
    d = derive(history)
    cust = d.custodian or rng.choice(NAMES)
    kinds = [h.kind for h in history]
    holders = [n for n in NAMES if role_of(n) in HOLDERS and n != cust]
    buyers = [n for n in NAMES if role_of(n) not in (None, R.GOVERNMENT) and n != cust]
    if d.state == "REGISTERED":
        return Ev(E.COLLECTION, _pick(rng, ["RETAILER", "RETAIL2"]), "CUSTOMER")
    if d.state == "IN_TRANSIT" or (d.state == "COLLECTED" and rng.random() < 0.4):
        return Ev(E.CUSTODY_TRANSFER, cust, _pick(rng, holders))
    if d.state == "COLLECTED":
        return Ev(E.INSPECTION, cust, result=EventResult.PASS)
    if d.state == "IN_PROCESS":
        need = [k for k in (E.PHYSICAL_CONDITION_ANALYSIS, E.DATA_WIPE) if k not in kinds]
        roll = rng.random()
        if need and roll < 0.6:
            return Ev(need[0], cust, result=EventResult.PASS)
        if roll < 0.7:
            return Ev(E.FUNCTIONAL_TEST, cust, result=rng.choice([EventResult.PASS, EventResult.FAIL]))
        if roll < 0.8:
            return replacement_event(rng, cust, d)
        if roll < 0.85:
            return Ev(rng.choice([E.REPAIR, E.CUSTOMIZATION_REMOVAL]), cust)
        cls = Classification.REMANUFACTURED if cust == MAKER and rng.random() < 0.5 else Classification.REFURBISHED
        return Ev(E.CLASSIFICATION, cust, classification=cls)
    if d.state == "PROCESSED":
        if rng.random() < 0.3:
            return Ev(E.CUSTODY_TRANSFER, cust, _pick(rng, holders))
        return Ev(rng.choice([E.SALE, E.DONATION]), cust, _pick(rng, buyers))
    return Ev(E.SALE, cust, _pick(rng, buyers))


def replacement_event(rng: random.Random, actor: str, d: Derived) -> Ev:
    pool = list(d.installed.values()) + sorted(d.ever - set(d.installed.values())) + ["BOGUS"]
    old = rng.choice(pool)
    old_type = next((t for t, s in d.installed.items() if s == old), None)
    new_type = old_type if old_type is not None and rng.random() < 0.8 else rng.choice(list(ComponentType))
    new_serial = rng.choice([f"{SERIAL}-R{rng.randrange(4)}", *sorted(d.ever)[:1]])
    return Ev(E.COMPONENT_REPLACEMENT, actor, old_serial=old, new_type=new_type, new_serial=new_serial)


def chaotic(rng: random.Random, history: list[Ev]) -> Ev:
    """Anything at all from the event universe."""
    d = derive(history)
    kind = rng.choice(list(EventType))
    actor = rng.choice(NAMES + [d.custodian or "RETAILER"] * 3)
    cp = rng.choice(NAMES + [None, None])
    ev = Ev(kind, actor, cp, rng.choice(list(EventResult)),
            zero_detail=rng.random() < 0.03,
            classification=rng.choice(list(Classification)),
            via_record=kind == E.CLASSIFICATION and rng.random() < 0.3)
    if rng.random() < 0.15:
        rep = replacement_event(rng, actor, d)
        ev = Ev(ev.kind, ev.actor, ev.counterparty, ev.result, ev.zero_detail, ev.classification,
                ev.via_record, rep.old_serial, rep.new_type, rep.new_serial)
    if kind == E.CLASSIFICATION and not ev.via_record:
        # a classify transaction carries only serial, classification and record
        ev = Ev(kind, actor, zero_detail=ev.zero_detail, classification=ev.classification)
    return ev


def random_sequence(rng: random.Random, max_len: int = 12, p_guided: float = 0.75,
                    raw: bool = False) -> list[Ev]:
    """Random events. Guided picks follow the accepted prefix, or with ``raw``
    the full prefix (for histories that bypass the registry)."""
    events: list[Ev] = []
    accepted: list[Ev] = []
    for i in range(rng.randint(1, max_len)):
        base = events if raw else accepted
        ev = guided(rng, base) if rng.random() < p_guided else chaotic(rng, base)
        ev = Ev(**{**ev.__dict__, "detail_salt": i})
        events.append(ev)
        if judge(accepted, ev):
            accepted.append(ev)
    return events


# -- bridging to the package -------------------------------------------------------

def detail_for(ev: Ev) -> bytes:
    return ZERO_HASH if ev.zero_detail else sha256(f"{ev.kind.name}/{ev.actor}/{ev.detail_salt}".encode())


def payload_for(ev: Ev, detail: Optional[bytes] = None):
    detail = detail_for(ev) if detail is None else detail
    if ev.kind == E.CLASSIFICATION and not ev.via_record:
        return ClassifyDevice(SERIAL, ev.classification, detail)
    cp = CAST[ev.counterparty][0].public if ev.counterparty else None
    rep = None
    if ev.has_replacement:
        rep = Replacement(ev.old_serial, ComponentSpec(ev.new_type, ev.new_serial, sha256(b"spec")))
    return RecordEvent(SERIAL, ev.kind, cp, ev.result, detail, rep)


def setup_payloads() -> list[tuple[Keypair, object]]:
    """Signer and payload for stakeholder enrolment and device registration."""
    out = [(REGISTRAR, RegisterStakeholder(k.public, role, name))
           for name, (k, role) in CAST.items() if role is not None]
    maker = CAST[MAKER][0]
    bom = tuple(ComponentSpec(ct, s, sha256(s.encode())) for ct, s in INITIAL_BOM.items())
    out.append((maker, RegisterDevice(SERIAL, "Oracle", maker.public, bom)))
    return out


def fresh_registry() -> Registry:
    reg = Registry(frozenset({REGISTRAR.public}))
    for key, payload in setup_payloads():
        reg.apply(key.public, payload, 0)
    return reg
