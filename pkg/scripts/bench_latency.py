#!/usr/bin/env python3
"""Submit-to-commit latency of a single local validator node."""
import argparse
import dataclasses
import json

from rlchain.experiments import LatencyConfig, latency_benchmark


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--txs", type=int, default=1000)
    p.add_argument("--seal-interval-ms", type=int, default=10)
    p.add_argument("--no-fsync", action="store_true")
    p.add_argument("--in-process", action="store_true", help="bypass HTTP and submit straight to the node")
    p.add_argument("--pace-ms", type=float, default=0.0)
    p.add_argument("--repeat", type=int, default=1)
    p.add_argument("--json", action="store_true")
    a = p.parse_args()
    cfg = LatencyConfig(n_txs=a.txs, seal_interval_ms=a.seal_interval_ms, fsync=not a.no_fsync,
                        via_http=not a.in_process, pace_ms=a.pace_ms)
    for _ in range(a.repeat):
        r = latency_benchmark(cfg)
        print(json.dumps(dataclasses.asdict(r)) if a.json else r.summary())


if __name__ == "__main__":
    main()
