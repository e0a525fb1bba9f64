import dataclasses
import random

import pytest

from oracles import CAST, REGISTRAR, SERIAL, judge_sequence, payload_for, random_sequence, setup_payloads
from rlchain.audit import ChainAudit, FindingCode, Verdict, reconstruct_custody, render_report, verify_full
from rlchain.block import decode_block
from rlchain.crypto import Keypair
from rlchain.encoding import ZERO_HASH
from rlchain.errors import NotFound
from rlchain.model import EventType, Role
from rlchain.offchain import OffchainStore, anchor_toc
from rlchain.scenario import (
    DEMO_CHAIN_ID,
    LocalChain,
    bypass_seal,
    detail_of,
    inject_forged_signature,
    inject_skipped_wipe,
    inject_tampered_report,
    refurbish_pipeline,
    run_demo,
)
from rlchain.block import GenesisConfig
from rlchain.tx import RegisterDevice, make_tx
from rlchain.scenario import demo_bom


@pytest.fixture
def demo(tmp_path):
    return run_demo(tmp_path)


def audit(demo, blocks=None, serial=None):
    return reconstruct_custody(serial or demo.serial, blocks or demo.chain.blocks, demo.stores, demo.chain.genesis)


def test_compliant_demo_and_timeline(demo):
    report = audit(demo)
    assert report.verdict == Verdict.COMPLIANT and not report.findings
    assert [e.seq for e in report.events] == list(range(len(report.events)))
    roles = [s.role for s in report.custody_timeline]
    assert roles == [Role.RETAILER, Role.THIRD_PARTY_LOGISTICS, Role.REFURBISHER, Role.RETAILER, Role.CUSTOMER]
    assert all(all(v is True for v in e.checks.values()) for e in report.events)
    text = render_report(report, demo.names())
    assert "COMPLIANT" in text and "refurbisher" in text


def test_unknown_device(demo):
    with pytest.raises(NotFound):
        audit(demo, serial="nope")


def test_missing_wipe_via_bypass(tmp_path):
    demo = inject_skipped_wipe(tmp_path)
    report = audit(demo)
    assert report.verdict == Verdict.NON_COMPLIANT
    assert FindingCode.MISSING_WIPE in report.codes()


def test_unresolvable_record_is_indeterminate(demo):
    address, owner = detail_of(demo, EventType.FUNCTIONAL_TEST)
    owner.store.cas.path_for(address).unlink()
    report = audit(demo)
    assert report.verdict == Verdict.INDETERMINATE
    assert report.codes() == {FindingCode.UNRESOLVABLE_RECORD}


def test_tampered_record_flags_only_its_device(tmp_path):
    demo = run_demo(tmp_path / "a", serial="P1")
    maker = demo["manufacturer"]
    demo.chain.run(maker.tx(RegisterDevice("P2", "X", maker.id, demo_bom("P2"))))
    second = dataclasses.replace(demo, serial="P2")
    steps = refurbish_pipeline(second)
    for tx in steps:
        demo.chain.submit(tx)
    demo.chain.seal()
    for p in demo.people.values():
        if len(p.store.toc(p.id)) > p.anchored:
            demo.chain.submit(p.anchor())
    demo.chain.seal()
    assert not demo.chain.rejected
    before = verify_full(demo.chain.blocks, demo.stores, demo.chain.genesis)
    assert before.ok
    inject_tampered_report(second, EventType.DATA_WIPE)
    after = verify_full(demo.chain.blocks, demo.stores, demo.chain.genesis)
    assert after.devices["P1"].verdict == Verdict.COMPLIANT
    assert after.devices["P2"].verdict == Verdict.NON_COMPLIANT
    assert after.devices["P2"].codes() == {FindingCode.UNANCHORED_RECORD}
    assert {f["scope"] for f in after.findings()} == {"device:P2"}


def test_forged_signature(demo):
    blocks = inject_forged_signature(demo)
    report = audit(demo, blocks)
    assert report.verdict == Verdict.NON_COMPLIANT
    assert FindingCode.BAD_SIGNATURE in report.codes()


def test_verify_full_pristine_and_deterministic(demo):
    a = verify_full(demo.chain.blocks, demo.stores, demo.chain.genesis)
    b = verify_full(demo.chain.blocks, demo.stores, demo.chain.genesis)
    assert a.ok and a.findings() == []
    assert a.dumps() == b.dumps()
    assert all(x["status"] == "VERIFIED" for x in a.anchors)


def test_independent_of_registry_state(demo):
    first = audit(demo).to_json()
    raw = [b.serialize() for b in demo.chain.blocks]
    del demo.chain.state
    decode_block.cache_clear()
    again = reconstruct_custody(demo.serial, [decode_block(r) for r in raw], demo.stores, demo.chain.genesis)
    assert again.to_json() == first


def test_monotone_detection(tmp_path):
    for n, inject in enumerate((lambda d: inject_tampered_report(d, EventType.COLLECTION),
                                lambda d: inject_tampered_report(d, EventType.SALE))):
        demo = run_demo(tmp_path / str(n))
        inject(demo)
        assert audit(demo).verdict != Verdict.COMPLIANT


# -- soundness against the brute-force checker ----------------------------------------

VALIDATOR = Keypair.from_seed("oracle-validator")


def audit_raw_history(events, root) -> Verdict:
    """Put ``events`` on chain unvalidated, with records stored and anchored."""
    genesis = GenesisConfig(DEMO_CHAIN_ID, (VALIDATOR.public,), (REGISTRAR.public,), 0)
    chain = LocalChain(genesis, [VALIDATOR])
    nonces = {}

    def sign(key, payload):
        nonces[key.public] = nonces.get(key.public, 0) + 1
        return make_tx(payload, key, nonces[key.public], genesis.chain_id)

    for key, payload in setup_payloads():
        chain.submit(sign(key, payload))
    chain.seal()
    assert not chain.rejected
    store = OffchainStore(root)
    txs = []
    for i, ev in enumerate(events):
        key = CAST[ev.actor][0]
        detail = ZERO_HASH
        if not ev.zero_detail:
            detail, _ = store.put_and_index(key, f"ev/{i}", f"{i}:{ev}".encode())
        txs.append(sign(key, payload_for(ev, detail)))
    for i in range(0, len(txs), 4):
        bypass_seal(chain, txs[i:i + 4])
    anchors = []
    for name, (key, _) in CAST.items():
        toc = store.toc(key.public)
        if len(toc):
            anchors.append(anchor_toc(key, toc, 0, nonces.get(key.public, 0) + 1, genesis.chain_id))
    bypass_seal(chain, anchors)
    return reconstruct_custody(SERIAL, chain.blocks, [store], genesis).verdict


def test_audit_matches_compliance_oracle(tmp_path):
    rng = random.Random(7)
    seen = {True: 0, False: 0}
    for n in range(150):
        events = random_sequence(rng, p_guided=0.92 if n % 2 else 0.6, raw=True)
        expected = judge_sequence(events)
        seen[expected] += 1
        verdict = audit_raw_history(events, tmp_path / str(n))
        assert (verdict == Verdict.COMPLIANT) == expected, events
        assert verdict != Verdict.INDETERMINATE
    assert seen[True] >= 10 and seen[False] >= 10
