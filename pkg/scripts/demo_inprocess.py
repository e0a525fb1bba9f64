#!/usr/bin/env python3
"""Reference refurbishing scenario in-process, plus the three fault injections."""
import argparse
import tempfile
from pathlib import Path

from rlchain.audit import reconstruct_custody, render_report
from rlchain.model import EventType
from rlchain.scenario import inject_forged_signature, inject_skipped_wipe, inject_tampered_report, run_demo


def audit(demo, blocks=None):
    return reconstruct_custody(demo.serial, blocks or demo.chain.blocks, demo.stores, demo.chain.genesis)


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--dir", type=Path, help="keep stores here instead of a temp dir")
    p.add_argument("--full", action="store_true", help="print the full clean report")
    a = p.parse_args()
    with tempfile.TemporaryDirectory() as tmp:
        root = a.dir or Path(tmp)
        demo = run_demo(root / "clean")
        report = audit(demo)
        print(render_report(report, demo.names()) if a.full else f"clean run: {report.verdict.name}")

        r = audit(inject_skipped_wipe(root / "wipe"))
        print(f"skipped wipe: {r.verdict.name} {sorted(c.name for c in r.codes())}")

        d = run_demo(root / "tamper")
        inject_tampered_report(d, EventType.DATA_WIPE)
        r = audit(d)
        print(f"tampered wipe report: {r.verdict.name} {sorted(c.name for c in r.codes())}")

        d = run_demo(root / "forge")
        r = audit(d, inject_forged_signature(d, EventType.SALE))
        print(f"forged sale signature: {r.verdict.name} {sorted(c.name for c in r.codes())}")


if __name__ == "__main__":
    main()
