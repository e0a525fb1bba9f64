from __future__ import annotations

import pytest

from rlchain.crypto import Keypair
from rlchain.encoding import sha256
from rlchain.model import Role
from rlchain.registry import Registry
from rlchain.scenario import demo_bom
from rlchain.tx import RegisterDevice

REGISTRAR = Keypair.from_seed("registrar")
ROLE_KEYS = {role: Keypair.from_seed(f"role-{role.name}") for role in Role}
# a second refurbisher and manufacturer, for "not the original maker" cases
OTHER_REFURB = Keypair.from_seed("role-REFURBISHER-2")
OTHER_MAKER = Keypair.from_seed("role-MANUFACTURER-2")


def rec(label: str) -> bytes:
    return sha256(label.encode())


def populated_registry() -> Registry:
    reg = Registry(frozenset({REGISTRAR.public}))
    for role, key in ROLE_KEYS.items():
        reg.register_stakeholder(REGISTRAR.public, key.public, role, role.name.title())
    reg.register_stakeholder(REGISTRAR.public, OTHER_REFURB.public, Role.REFURBISHER, "Refurb 2")
    reg.register_stakeholder(REGISTRAR.public, OTHER_MAKER.public, Role.MANUFACTURER, "Maker 2")
    return reg


def with_device(reg: Registry, serial: str = "D1", registrant: Role = Role.MANUFACTURER) -> Registry:
    maker = ROLE_KEYS[Role.MANUFACTURER].public
    reg.register_device(ROLE_KEYS[registrant].public, RegisterDevice(serial, "M", maker, demo_bom(serial)))
    return reg


@pytest.fixture
def registry() -> Registry:
    return with_device(populated_registry())


@pytest.fixture
def keys():
    return ROLE_KEYS


# one line per acceptance criterion, echoed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
