"""Enumerations and record types for stakeholders, devices and process events."""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Optional


class Role(IntEnum):
    CUSTOMER = 1
    RETAILER = 2
    MANUFACTURER = 3
    THIRD_PARTY_LOGISTICS = 4
    GOVERNMENT = 5
    REFURBISHER = 6


class ComponentType(IntEnum):
    CPU = 1
    CAMERA = 2
    BATTERY = 3
    DISPLAY = 4
    INTERNAL_MEMORY = 5
    MOTHERBOARD = 6


class DeviceState(IntEnum):
    REGISTERED = 1
    COLLECTED = 2
    IN_TRANSIT = 3
    IN_PROCESS = 4
    PROCESSED = 5
    FINALIZED = 6
    # Reserved: the recycling path is not modelled and nothing transitions here.
    RECYCLED = 7


class Classification(IntEnum):
    NONE = 0
    REMANUFACTURED = 1
    REFURBISHED = 2


class Disposition(IntEnum):
    NONE = 0
    SOLD_SECONDARY = 1
    DONATED = 2


class EventType(IntEnum):
    COLLECTION = 1
    CUSTODY_TRANSFER = 2
    INSPECTION = 3
    PHYSICAL_CONDITION_ANALYSIS = 4
    DATA_WIPE = 5
    FUNCTIONAL_TEST = 6
    CUSTOMIZATION_REMOVAL = 7
    REPAIR = 8
    COMPONENT_REPLACEMENT = 9
    CLASSIFICATION = 10
    SALE = 11
    DONATION = 12


class EventResult(IntEnum):
    NA = 0
    PASS = 1
    FAIL = 2


PROCESSING_EVENTS = frozenset({
    EventType.INSPECTION,
    EventType.PHYSICAL_CONDITION_ANALYSIS,
    EventType.DATA_WIPE,
    EventType.FUNCTIONAL_TEST,
    EventType.CUSTOMIZATION_REMOVAL,
    EventType.REPAIR,
    EventType.COMPONENT_REPLACEMENT,
})

RELEASE_EVENTS = frozenset({EventType.SALE, EventType.DONATION})

_PROCESSORS = frozenset({Role.MANUFACTURER, Role.REFURBISHER, Role.RETAILER})

# Who may write which event. CLASSIFICATION is further narrowed by the
# requested classification (REMANUFACTURED needs the original manufacturer).
PERMISSIONS: dict[EventType, frozenset[Role]] = {
    EventType.COLLECTION: frozenset({Role.RETAILER}),
    EventType.CUSTODY_TRANSFER: frozenset({
        Role.RETAILER, Role.THIRD_PARTY_LOGISTICS, Role.MANUFACTURER, Role.REFURBISHER,
    }),
    **{ev: _PROCESSORS for ev in PROCESSING_EVENTS},
    EventType.CLASSIFICATION: _PROCESSORS,
    EventType.SALE: _PROCESSORS,
    EventType.DONATION: _PROCESSORS,
}

DEVICE_REGISTRARS = frozenset({Role.MANUFACTURER, Role.RETAILER})

# Roles that can hold a device through a custody transfer. Customers only
# receive devices through SALE or DONATION; the government never holds one.
TRANSFER_TARGETS = frozenset({
    Role.RETAILER, Role.THIRD_PARTY_LOGISTICS, Role.MANUFACTURER, Role.REFURBISHER,
})

MANDATORY_STEPS = frozenset({
    EventType.INSPECTION,
    EventType.PHYSICAL_CONDITION_ANALYSIS,
    EventType.DATA_WIPE,
})

MAX_NAME = 256
MAX_SERIAL = 128
MAX_KEY = 256


@dataclass(frozen=True)
class TocAnchor:
    stakeholder: bytes
    toc_length: int
    toc_root: bytes
    anchored_at: int


@dataclass
class StakeholderRecord:
    id: bytes
    role: Role
    display_name: str
    registered_at: int
    active: bool = True
    toc_state: Optional[TocAnchor] = None


@dataclass
class ComponentRecord:
    component_type: ComponentType
    serial: str
    feature_info_hash: bytes
    installed: bool = True


@dataclass
class DeviceRecord:
    serial: str
    model: str
    original_manufacturer: bytes
    components: list[ComponentRecord]
    custodian: bytes
    state: DeviceState = DeviceState.REGISTERED
    classification: Classification = Classification.NONE
    disposition: Disposition = Disposition.NONE
    event_count: int = 0
    registered_at: int = 0

    def installed(self) -> dict[ComponentType, ComponentRecord]:
        return {c.component_type: c for c in self.components if c.installed}


@dataclass(frozen=True)
class ProcessEvent:
    event_type: EventType
    device_serial: str
    actor: bytes
    counterparty: Optional[bytes]
    result: EventResult
    detail_hash: bytes
    seq: int
    block_height: int
    classification: Classification = Classification.NONE
    replaced_serial: Optional[str] = None
    new_component_serial: Optional[str] = None
