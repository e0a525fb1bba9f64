"""``rlchain`` command-line client.

Mutating commands build, sign and submit a transaction, then wait until it
commits (``--no-wait`` skips that). Commands that attach off-chain records
store them in the local content store, append them to the signer's TOC and
anchor the TOC at the end of the invocation unless ``--no-anchor`` is given.
Exit status: 0 on success, otherwise the code listed in ``EXIT_CODES``.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import signal
import sys
import threading
from pathlib import Path
from typing import Optional

from rlchain.audit import ChainAudit, Verdict, render_report
from rlchain.block import GenesisConfig
from rlchain.client import NodeClient
from rlchain.crypto import Keypair
from rlchain.encoding import parse_hex, sha256
from rlchain.errors import NotFound, RLError
from rlchain.keystore import Keystore
from rlchain.ledger import verify_chain
from rlchain.model import Classification, ComponentType, EventResult, EventType, Role
from rlchain.offchain import MAX_RECORD, OffchainStore, anchor_toc
from rlchain.tx import (
    ClassifyDevice,
    ComponentSpec,
    RecordEvent,
    RegisterDevice,
    RegisterStakeholder,
    Replacement,
    Transaction,
    make_tx,
    tx_hash,
)

EXIT_CODES = {
    "PERMISSION_DENIED": 10,
    "ALREADY_EXISTS": 11,
    "NOT_FOUND": 12,
    "INVALID_BOM": 13,
    "INVALID_TRANSITION": 14,
    "MISSING_RECORD": 15,
    "NO_PROGRESS": 16,
    "TOO_LARGE": 17,
    "INTEGRITY_FAILURE": 18,
    "OUT_OF_RANGE": 19,
    "SERIALIZATION_ERROR": 20,
    "BAD_SIGNATURE": 21,
    "STALE_NONCE": 22,
    "NOT_YOUR_TURN": 23,
    "CORRUPT_CHAIN": 24,
    "DUPLICATE": 25,
    "TIMEOUT": 26,
    "UNREACHABLE": 27,
    "NON_COMPLIANT": 30,
    "INDETERMINATE": 31,
    "VERIFY_FAILED": 32,
}

REPORT_SCHEMA = "rlchain/report/v1"


class Session:
    """Per-invocation context: node, keystore, local store, pending anchors."""

    def __init__(self, args):
        self.args = args
        self.client = NodeClient(args.node, timeout=args.timeout)
        self.keys = Keystore(args.keystore)
        self.store = OffchainStore(args.store)
        self._genesis: Optional[GenesisConfig] = None
        self._nonces: dict[bytes, int] = {}
        self.touched: dict[bytes, Keypair] = {}

    @property
    def genesis(self) -> GenesisConfig:
        if self._genesis is None:
            path = getattr(self.args, "genesis", None)
            self._genesis = GenesisConfig.load(path) if path else self.client.genesis()
        return self._genesis

    def signer(self) -> Keypair:
        return self.keys.load(self.args.as_)

    def nonce(self, key: Keypair) -> int:
        if key.public not in self._nonces:
            self._nonces[key.public] = self.client.next_nonce(key.public)
        else:
            self._nonces[key.public] += 1
        return self._nonces[key.public]

    def sign(self, key: Keypair, payload) -> Transaction:
        return make_tx(payload, key, self.nonce(key), self.genesis.chain_id)

    def attach(self, key: Keypair, label: str, envelope: dict) -> bytes:
        data = json.dumps(envelope, sort_keys=True, indent=1).encode()
        address, _ = self.store.put_and_index(key, label, data)
        self.touched[key.public] = key
        return address

    def report_envelope(self, event: str, serial: str, result: str, path: Optional[str]) -> dict:
        env = {"schema": REPORT_SCHEMA, "event_type": event, "device_serial": serial,
               "result": result, "report": None, "media": []}
        if path:
            raw = Path(path).read_bytes()
            try:
                env["report"] = raw.decode("utf-8")
            except UnicodeDecodeError:
                env["report"] = None
            if env["report"] is None or len(raw) > MAX_RECORD // 2:
                env["report"] = None
                if len(raw) <= MAX_RECORD:
                    self.store.cas.put_record(raw)
                env["media"].append({"name": Path(path).name, "sha256": sha256(raw).hex(), "size": len(raw)})
        return env

    def submit(self, txs: list[Transaction]) -> list[dict]:
        for tx in txs:
            reply = self.client.submit(tx)
            if reply.get("status") != "accepted":
                raise _coded(reply.get("reason") or "REJECTED", reply.get("message", ""))
        if self.args.no_wait:
            return [{"status": "submitted", "tx_hash": tx_hash(t).hex()} for t in txs]
        out = []
        for tx in txs:
            st = self.client.wait(tx_hash(tx), timeout=self.args.timeout)
            if st["status"] == "dropped":
                code, _, msg = st["reason"].partition(": ")
                raise _coded(code, msg)
            out.append({"status": "committed", "block": st["block"], "tx_hash": tx_hash(tx).hex()})
        return out

    def anchors(self) -> list[Transaction]:
        if getattr(self.args, "no_anchor", False):
            return []
        txs = []
        for key in self.touched.values():
            try:
                stats = self.client.get("stakeholder", key.public.hex(), "stats")["stats"]
            except NotFound:
                continue
            last = (stats["latest_anchor"] or {}).get("toc_length", 0)
            toc = self.store.toc(key.public)
            if len(toc) > last:
                txs.append(anchor_toc(key, toc, last, self.nonce(key), self.genesis.chain_id))
        return txs


def _coded(code: str, msg: str) -> RLError:
    from rlchain.errors import error_for_code

    return error_for_code(code, msg)


def _emit(args, obj, text: Optional[str] = None) -> None:
    if args.json or text is None:
        print(json.dumps(obj, sort_keys=True, indent=2))
    else:
        print(text)


def _enum_arg(cls):
    def parse(value: str):
        try:
            return cls[value.upper().replace("-", "_")]
        except KeyError:
            raise argparse.ArgumentTypeError(
                f"choose from {', '.join(m.name for m in cls)}") from None
    parse.__name__ = cls.__name__
    return parse


# -- commands -------------------------------------------------------------------

def cmd_keygen(args) -> int:
    key = Keystore(args.keystore).create(args.name)
    _emit(args, {"name": args.name, "public": key.public.hex()}, f"{args.name} {key.public.hex()}")
    return 0


def cmd_genesis(args) -> int:
    ks = Keystore(args.keystore)
    genesis = GenesisConfig(
        chain_id=args.chain_id,
        validators=tuple(ks.resolve(v) for v in args.validator),
        registrars=tuple(ks.resolve(r) for r in args.registrar),
        genesis_time=args.genesis_time,
    )
    genesis.save(args.out)
    _emit(args, genesis.to_json(), f"wrote {args.out}")
    return 0


def _key_path(args) -> Optional[Path]:
    if not args.key:
        return None
    path = Path(args.key)
    return path if path.exists() else Keystore(args.keystore).path(args.key)


def cmd_node(args) -> int:
    from rlchain.node import Node, NodeConfig

    config = NodeConfig(
        data_dir=Path(args.data_dir),
        genesis_path=Path(args.genesis),
        listen=args.listen,
        validator_key_path=_key_path(args),
        seal_interval_ms=args.seal_interval_ms,
        allow_empty_blocks=args.allow_empty,
        extra_stores=[Path(p) for p in args.extra_store],
    )
    try:
        node = Node(config)
    except RLError as exc:
        report = getattr(exc, "report", None)
        if report is not None:
            print(json.dumps(report.to_json(), indent=2), file=sys.stderr)
        raise
    node.start()
    print(f"node listening on {node.address} height={node.state.height}", flush=True)
    done = threading.Event()
    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, lambda *_: done.set())
    done.wait()
    node.stop()
    return 0


def cmd_register_stakeholder(args) -> int:
    s = Session(args)
    key = s.signer()
    candidate = s.keys.resolve(args.key)
    tx = s.sign(key, RegisterStakeholder(candidate, args.role, args.name))
    res = s.submit([tx])
    _emit(args, {"stakeholder": candidate.hex(), "role": args.role.name, "tx": res},
          f"registered {args.role.name} {candidate.hex()[:16]}")
    return 0


def cmd_register_device(args) -> int:
    s = Session(args)
    key = s.signer()
    given = {}
    for item in args.component or []:
        name, _, serial = item.partition("=")
        ctype = _enum_arg(ComponentType)(name)
        if ctype in given:
            raise _coded("INVALID_BOM", f"component type {ctype.name} given twice")
        given[ctype] = serial
    if args.auto_components:
        for ct in ComponentType:
            given.setdefault(ct, f"{args.serial}-{ct.name}")
    specs = []
    for ct, serial in given.items():
        feature = s.attach(key, f"component/{args.serial}/{ct.name}",
                           {"schema": REPORT_SCHEMA, "event_type": "COMPONENT_SPEC",
                            "device_serial": args.serial, "component_type": ct.name, "serial": serial})
        specs.append(ComponentSpec(ct, serial, feature))
    maker = s.keys.resolve(args.manufacturer) if args.manufacturer else key.public
    tx = s.sign(key, RegisterDevice(args.serial, args.model, maker, tuple(specs)))
    res = s.submit([tx] + s.anchors())
    _emit(args, {"device": args.serial, "tx": res}, f"registered device {args.serial}")
    return 0


def _event(args, s: Session, kind: EventType, counterparty: Optional[str], result: EventResult,
           replacement: Optional[Replacement] = None) -> int:
    key = s.signer()
    env = s.report_envelope(kind.name, args.device, result.name, getattr(args, "report", None))
    env["actor"] = key.public.hex()
    label = f"{kind.name.lower()}/{args.device}/{s.client.next_nonce(key.public)}"
    detail = s.attach(key, label, env)
    cp = s.keys.resolve(counterparty) if counterparty else None
    tx = s.sign(key, RecordEvent(args.device, kind, cp, result, detail, replacement))
    res = s.submit([tx] + s.anchors())
    _emit(args, {"device": args.device, "event_type": kind.name, "detail_hash": detail.hex(), "tx": res},
          f"{kind.name} recorded on {args.device} (record {detail.hex()[:16]})")
    return 0


def cmd_record_event(args) -> int:
    s = Session(args)
    replacement = None
    if args.replace:
        if not args.new_serial:
            raise _coded("INVALID_BOM", "--replace needs --new-serial")
        key = s.signer()
        dev = s.client.get("device", args.device)["device"]
        old = next((c for c in dev["components"] if c["serial"] == args.replace and c["installed"]), None)
        if old is None:
            raise _coded("INVALID_BOM", f"no installed component {args.replace!r}")
        ctype = ComponentType[old["component_type"]]
        feature = s.attach(key, f"component/{args.device}/{args.new_serial}",
                           {"schema": REPORT_SCHEMA, "event_type": "COMPONENT_SPEC",
                            "device_serial": args.device, "component_type": ctype.name,
                            "serial": args.new_serial})
        replacement = Replacement(args.replace, ComponentSpec(ctype, args.new_serial, feature))
    if args.type == EventType.CLASSIFICATION:
        raise _coded("INVALID_TRANSITION", "use the classify command for CLASSIFICATION")
    return _event(args, s, args.type, args.counterparty, args.result, replacement)


def cmd_transfer(args) -> int:
    return _event(args, Session(args), EventType.CUSTODY_TRANSFER, args.to, EventResult.NA)


def cmd_sell(args) -> int:
    return _event(args, Session(args), EventType.SALE, args.buyer, EventResult.NA)


def cmd_donate(args) -> int:
    return _event(args, Session(args), EventType.DONATION, args.to, EventResult.NA)


def cmd_classify(args) -> int:
    s = Session(args)
    key = s.signer()
    env = s.report_envelope("CLASSIFICATION", args.device, "NA", args.report)
    env["classification"] = args.classification.name
    env["actor"] = key.public.hex()
    detail = s.attach(key, f"classification/{args.device}", env)
    tx = s.sign(key, ClassifyDevice(args.device, args.classification, detail))
    res = s.submit([tx] + s.anchors())
    _emit(args, {"device": args.device, "classification": args.classification.name, "tx": res},
          f"{args.device} classified {args.classification.name}")
    return 0


def cmd_anchor_toc(args) -> int:
    s = Session(args)
    key = s.signer()
    stats = s.client.get("stakeholder", key.public.hex(), "stats")["stats"]
    last = (stats["latest_anchor"] or {}).get("toc_length", 0)
    toc = s.store.toc(key.public)
    tx = anchor_toc(key, toc, last, s.nonce(key), s.genesis.chain_id)
    res = s.submit([tx])
    _emit(args, {"toc_length": len(toc), "toc_root": toc.root().hex(), "tx": res},
          f"anchored {len(toc)} TOC entries, root {toc.root().hex()[:16]}")
    return 0


def cmd_trace(args) -> int:
    client = NodeClient(args.node, timeout=args.timeout)
    hist = client.get("device", args.serial, "history")
    dev = client.get("device", args.serial)["device"]
    names = {k.hex(): v for k, v in _names(args).items()}

    def who(h):
        return "-" if not h else names.get(h, h[:12])

    lines = [f"{dev['serial']} ({dev['model']}) state={dev['state']} "
             f"classification={dev['classification']} custodian={who(dev['custodian'])}"]
    for e in hist["events"]:
        lines.append(f"{e['seq']:>4}  {e['event_type']:<28} {who(e['actor']):<13} {who(e['counterparty']):<13} "
                     f"{e['result']:<4} h={e['block_height']}  record={e['detail_hash'][:16]}")
    _emit(args, {**hist, "device": dev}, "\n".join(lines))
    return 0


def _names(args) -> dict[bytes, str]:
    ks = Keystore(args.keystore)
    try:
        return {ks.resolve(n): n for n in ks.names()}
    except (OSError, RLError, ValueError):
        return {}


def _audit_stores(args) -> list[OffchainStore]:
    return [OffchainStore(p) for p in [args.store, *args.extra_store]]


def cmd_audit(args) -> int:
    client = NodeClient(args.node, timeout=args.timeout)
    genesis = GenesisConfig.load(args.genesis) if args.genesis else client.genesis()
    blocks = client.blocks()
    ctx = ChainAudit(blocks, genesis, _audit_stores(args))
    serials = sorted(ctx.devices) if args.all else [args.serial]
    if not serials or serials == [None]:
        raise _coded("NOT_FOUND", "give a device serial or --all")
    reports = [ctx.report(s) for s in serials]
    chain_ok = verify_chain(blocks, genesis).ok
    payload = {"height": blocks[-1].height, "chain_ok": chain_ok,
               "reports": [r.to_json() for r in reports]}
    _emit(args, payload, "\n\n".join(render_report(r, _names(args)) for r in reports)
          + ("" if chain_ok else "\n\nchain verification FAILED"))
    verdicts = {r.verdict for r in reports}
    if not chain_ok or Verdict.NON_COMPLIANT in verdicts:
        return EXIT_CODES["NON_COMPLIANT"]
    if Verdict.INDETERMINATE in verdicts:
        return EXIT_CODES["INDETERMINATE"]
    return 0


def cmd_verify(args) -> int:
    client = NodeClient(args.node, timeout=args.timeout)
    if args.genesis:
        report = verify_chain(client.blocks(), GenesisConfig.load(args.genesis)).to_json()
    else:
        report = client.get("verify")["report"]
    text = (f"chain of {report['length']} blocks: "
            + ("all checks pass" if report["ok"] else f"FAILED at {report['failing_blocks']}"))
    _emit(args, report, text)
    return 0 if report["ok"] else EXIT_CODES["VERIFY_FAILED"]


def cmd_status(args) -> int:
    st = NodeClient(args.node, timeout=args.timeout).status()
    _emit(args, st, f"height={st['height']} tip={st['tip_hash'][:16]} pending={st['pending']} "
                    f"state={st['state_digest'][:16]}")
    return 0


def cmd_stats(args) -> int:
    client = NodeClient(args.node, timeout=args.timeout)
    sid = Keystore(args.keystore).resolve(args.stakeholder)
    stats = client.get("stakeholder", sid.hex(), "stats")["stats"]
    counts = ", ".join(f"{k}={v}" for k, v in stats["event_counts"].items() if v)
    anchor = stats["latest_anchor"]
    _emit(args, stats, f"{stats['role']} {stats['id'][:16]}: devices={stats['devices_handled']} "
                       f"events[{counts or 'none'}] anchor="
                       + (f"{anchor['toc_length']}@{anchor['anchored_at']}" if anchor else "none"))
    return 0


# -- parser ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rlchain", description=__doc__.splitlines()[0])
    p.add_argument("--node", default=os.environ.get("RLCHAIN_NODE", "http://127.0.0.1:7545"))
    p.add_argument("--keystore", default=os.environ.get("RLCHAIN_KEYSTORE", "keys"))
    p.add_argument("--store", default=os.environ.get("RLCHAIN_STORE", "rlstore"),
                   help="local off-chain store (cas/ and toc/)")
    p.add_argument("--json", action="store_true", help="machine-readable output")
    p.add_argument("--timeout", type=float, default=30.0)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def signed(name, func, help):
        sp = sub.add_parser(name, help=help)
        sp.add_argument("--as", dest="as_", required=True, metavar="KEYNAME", help="signing key")
        sp.add_argument("--no-wait", action="store_true", help="do not wait for commit")
        sp.set_defaults(func=func, no_wait=False)
        return sp

    sp = sub.add_parser("keygen", help="create a named key pair")
    sp.add_argument("name")
    sp.set_defaults(func=cmd_keygen)

    sp = sub.add_parser("genesis", help="write a genesis file")
    sp.add_argument("--chain-id", type=int, required=True)
    sp.add_argument("--validator", action="append", required=True, help="key name or hex")
    sp.add_argument("--registrar", action="append", default=[], help="key name or hex")
    sp.add_argument("--genesis-time", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_genesis)

    sp = sub.add_parser("node", help="run a node")
    sp.add_argument("--data-dir", required=True)
    sp.add_argument("--genesis", required=True)
    sp.add_argument("--key", help="validator key file or keystore name; omit for a query-only node")
    sp.add_argument("--listen", default="127.0.0.1:7545")
    sp.add_argument("--seal-interval-ms", type=int, default=500)
    sp.add_argument("--allow-empty", action="store_true")
    sp.add_argument("--extra-store", action="append", default=[],
                    help="additional off-chain store consulted by compliance queries")
    sp.set_defaults(func=cmd_node)

    sp = signed("register-stakeholder", cmd_register_stakeholder, "registrar adds a stakeholder")
    sp.add_argument("--key", required=True, help="candidate key name or hex")
    sp.add_argument("--role", type=_enum_arg(Role), required=True)
    sp.add_argument("--name", required=True)

    sp = signed("register-device", cmd_register_device, "register a phone and its components")
    sp.add_argument("--serial", required=True)
    sp.add_argument("--model", required=True)
    sp.add_argument("--manufacturer", help="original manufacturer (default: signer)")
    sp.add_argument("--component", action="append", metavar="TYPE=SERIAL")
    sp.add_argument("--auto-components", action="store_true",
                    help="fill missing component types with <serial>-<TYPE>")
    sp.add_argument("--no-anchor", action="store_true")

    sp = signed("record-event", cmd_record_event, "record a process event")
    sp.add_argument("--device", required=True)
    sp.add_argument("--type", type=_enum_arg(EventType), required=True)
    sp.add_argument("--counterparty")
    sp.add_argument("--result", type=_enum_arg(EventResult), default=EventResult.NA)
    sp.add_argument("--report", help="file attached as the event's off-chain record")
    sp.add_argument("--replace", metavar="OLD_SERIAL", help="component being replaced")
    sp.add_argument("--new-serial", help="serial of the replacement component")
    sp.add_argument("--no-anchor", action="store_true")

    sp = signed("classify", cmd_classify, "classify a processed device")
    sp.add_argument("--device", required=True)
    sp.add_argument("--classification", type=_enum_arg(Classification), required=True)
    sp.add_argument("--report")
    sp.add_argument("--no-anchor", action="store_true")

    for name, func, target, help in (("transfer", cmd_transfer, "--to", "hand custody to another stakeholder"),
                                     ("sell", cmd_sell, "--buyer", "sell on the secondary market"),
                                     ("donate", cmd_donate, "--to", "donate the device")):
        sp = signed(name, func, help)
        sp.add_argument("--device", required=True)
        sp.add_argument(target, dest=target.strip("-"), required=True)
        sp.add_argument("--report")
        sp.add_argument("--no-anchor", action="store_true")

    signed("anchor-toc", cmd_anchor_toc, "commit the signer's TOC root on chain")

    sp = sub.add_parser("trace", help="device history")
    sp.add_argument("serial")
    sp.set_defaults(func=cmd_trace)

    sp = sub.add_parser("audit", help="custody and compliance report from raw blocks")
    sp.add_argument("serial", nargs="?")
    sp.add_argument("--all", action="store_true")
    sp.add_argument("--genesis", help="trusted genesis file (default: ask the node)")
    sp.add_argument("--extra-store", action="append", default=[])
    sp.set_defaults(func=cmd_audit)

    sp = sub.add_parser("verify", help="verify the whole chain")
    sp.add_argument("--genesis", help="verify locally against this genesis file")
    sp.set_defaults(func=cmd_verify)

    sub.add_parser("status", help="node height and state digest").set_defaults(func=cmd_status)

    sp = sub.add_parser("stats", help="stakeholder statistics")
    sp.add_argument("stakeholder", help="key name or hex")
    sp.set_defaults(func=cmd_stats)
    return p


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except RLError as exc:
        print(f"error: {exc.code}: {exc.message}", file=sys.stderr)
        if args.json:
            print(json.dumps({"error": exc.code, "message": exc.message}))
        return EXIT_CODES.get(exc.code, 1)


if __name__ == "__main__":
    sys.exit(main())
