import json
import os
import shutil
import subprocess
import sys
from pathlib import Path

import pytest

from rlchain import cli
from rlchain.keystore import Keystore
from rlchain.node import Node, NodeConfig
from rlchain.offchain import OffchainStore

ROOT = Path(__file__).resolve().parents[1]


@pytest.fixture
def world(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    ks = Keystore(tmp_path / "keys")
    for n in ("val", "reg", "maker", "shop", "ship", "fix", "cust"):
        ks.create(n)
    assert cli.main(["--keystore", "keys", "genesis", "--chain-id", "3", "--validator", "val",
                     "--registrar", "reg", "--out", "genesis.json"]) == 0
    node = Node(NodeConfig(tmp_path / "data", tmp_path / "genesis.json", "127.0.0.1:0",
                           tmp_path / "keys" / "val.key", seal_interval_ms=10, fsync=False,
                           extra_stores=[tmp_path / "st" / n for n in ("maker", "shop", "ship", "fix")]))
    node.start()
    yield node
    node.stop()


def run(node, *argv, store=None):
    base = ["--node", node.address, "--keystore", "keys"]
    if store:
        base += ["--store", f"st/{store}"]
    return cli.main(base + list(argv))


def setup_device(node, serial="C1"):
    for key, role in (("maker", "MANUFACTURER"), ("shop", "RETAILER"), ("ship", "THIRD_PARTY_LOGISTICS"),
                      ("fix", "REFURBISHER"), ("cust", "CUSTOMER")):
        assert run(node, "register-stakeholder", "--as", "reg", "--key", key, "--role", role, "--name", key) == 0
    assert run(node, "register-device", "--as", "maker", "--serial", serial, "--model", "X",
               "--auto-components", store="maker") == 0
    assert run(node, "record-event", "--as", "shop", "--device", serial, "--type", "COLLECTION",
               "--counterparty", "cust", store="shop") == 0
    assert run(node, "transfer", "--as", "shop", "--device", serial, "--to", "fix", store="shop") == 0


def test_sale_before_wipe_exit_code(world, capsys):
    setup_device(world)
    for t in ("INSPECTION", "PHYSICAL_CONDITION_ANALYSIS"):
        assert run(world, "record-event", "--as", "fix", "--device", "C1", "--type", t, "--result", "PASS",
                   store="fix") == 0
    code = run(world, "record-event", "--as", "fix", "--device", "C1", "--type", "SALE",
               "--counterparty", "cust", store="fix")
    assert code == cli.EXIT_CODES["INVALID_TRANSITION"]
    assert "INVALID_TRANSITION" in capsys.readouterr().err


def test_round_trip_trace_and_json(world, capsys):
    setup_device(world)
    report = Path("report.txt")
    report.write_text("inspection notes")
    assert run(world, "record-event", "--as", "fix", "--device", "C1", "--type", "INSPECTION",
               "--result", "PASS", "--report", str(report), store="fix") == 0
    capsys.readouterr()
    assert run(world, "--json", "trace", "C1") == 0
    out = json.loads(capsys.readouterr().out)
    assert [e["seq"] for e in out["events"]] == [0, 1, 2]
    detail = out["events"][2]["detail_hash"]
    envelope = json.loads(OffchainStore("st/fix").cas.get_record(bytes.fromhex(detail)))
    assert envelope["report"] == "inspection notes" and envelope["event_type"] == "INSPECTION"
    assert run(world, "--json", "stats", "fix") == 0
    stats = json.loads(capsys.readouterr().out)
    assert stats["event_counts"]["INSPECTION"] == 1 and stats["latest_anchor"]["toc_length"] == 1


def test_permission_and_missing_anchor_codes(world):
    setup_device(world)
    code = run(world, "record-event", "--as", "ship", "--device", "C1", "--type", "INSPECTION", store="ship")
    assert code == cli.EXIT_CODES["PERMISSION_DENIED"]
    assert run(world, "anchor-toc", "--as", "shop", store="shop") == cli.EXIT_CODES["NO_PROGRESS"]
    assert run(world, "trace", "nope") == cli.EXIT_CODES["NOT_FOUND"]


def test_unreachable_node(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert cli.main(["--node", "http://127.0.0.1:9", "--timeout", "1", "verify"]) == cli.EXIT_CODES["UNREACHABLE"]


def test_audit_exit_codes(world):
    setup_device(world)
    stores = ["--extra-store", "st/maker", "--extra-store", "st/ship", "--extra-store", "st/fix"]
    assert run(world, "audit", "C1", *stores, store="shop") == 0
    assert run(world, "audit", "C1", store="fix") == cli.EXIT_CODES["INDETERMINATE"]
    assert run(world, "verify") == 0


@pytest.mark.skipif(shutil.which("bash") is None or shutil.which("rlchain") is None,
                    reason="needs bash and the installed rlchain entry point")
def test_checked_in_demo_script(tmp_path):
    import socket
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
    proc = subprocess.run(["bash", str(ROOT / "scripts" / "demo.sh"), str(tmp_path / "demo")],
                          env={**os.environ, "PORT": str(port)}, capture_output=True, text=True, timeout=300)
    assert proc.returncode == 0, proc.stderr
    assert "PHONE-0001: COMPLIANT" in proc.stdout
    assert "all checks pass" in proc.stdout
