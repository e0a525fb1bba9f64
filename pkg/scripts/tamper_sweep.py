#!/usr/bin/env python3
"""Random single-bit corruption of persisted blocks; checks the verifier names the right block."""
import argparse

from rlchain.experiments import tamper_sweep


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--flips", type=int, default=10_000)
    p.add_argument("--blocks", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    a = p.parse_args()
    r = tamper_sweep(a.flips, a.blocks, a.seed)
    print(r.summary())
    for i, bit in r.misses[:20]:
        print(f"  missed: block {i} bit {bit}")
    raise SystemExit(0 if r.ok else 1)


if __name__ == "__main__":
    main()
