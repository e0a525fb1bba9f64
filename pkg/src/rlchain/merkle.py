"""Binary Merkle tree over 32-byte leaves.

Rules: an empty list commits to SHA-256 of the empty string, a single leaf is
its own root, and every level with an odd count duplicates its last node.
Interior nodes are ``sha256(left || right)``. Callers are expected to feed
leaves that are already domain separated (TOC entry hashes carry a 0x00
prefix); the committed leaf count closes the duplicate-last ambiguity.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from rlchain.encoding import EMPTY_SHA256, check_hash, sha256
from rlchain.errors import OutOfRange

LEFT = 0
RIGHT = 1


def _levels(leaves: Sequence[bytes]) -> list[list[bytes]]:
    level = [check_hash(h, "merkle leaf") for h in leaves]
    levels = [level]
    while len(level) > 1:
        if len(level) % 2:
            level = level + [level[-1]]
        level = [sha256(level[i] + level[i + 1]) for i in range(0, len(level), 2)]
        levels.append(level)
    return levels


def merkle_root(leaves: Sequence[bytes]) -> bytes:
    if not leaves:
        return EMPTY_SHA256
    return _levels(leaves)[-1][0]


@dataclass(frozen=True)
class PathStep:
    sibling: bytes
    side: int  # LEFT if the sibling sits to the left of the running node


def merkle_path(leaves: Sequence[bytes], index: int) -> list[PathStep]:
    if not 0 <= index < len(leaves):
        raise OutOfRange(f"leaf index {index} outside 0..{len(leaves) - 1}")
    path = []
    for level in _levels(leaves)[:-1]:
        sib = index ^ 1
        sibling = level[sib] if sib < len(level) else level[index]
        path.append(PathStep(sibling, LEFT if sib < index else RIGHT))
        index //= 2
    return path


def root_from_path(leaf: bytes, path: Sequence[PathStep]) -> bytes:
    node = leaf
    for step in path:
        if step.side == LEFT:
            node = sha256(step.sibling + node)
        else:
            node = sha256(node + step.sibling)
    return node
