"""Directory of named Ed25519 key files.

Each file ``<dir>/<name>.key`` is JSON ``{"name", "secret", "public"}`` with
hex fields, written with mode 0600.
"""
from __future__ import annotations

import json
import os
import re
from pathlib import Path

from rlchain.crypto import Keypair
from rlchain.encoding import parse_hex
from rlchain.errors import AlreadyExists, NotFound

_NAME = re.compile(r"^[A-Za-z0-9_.-]{1,64}$")


def load_key_file(path: str | Path) -> Keypair:
    obj = json.loads(Path(path).read_text())
    key = Keypair(parse_hex(obj["secret"], 32, "secret"))
    if "public" in obj and obj["public"] != key.public.hex():
        raise ValueError(f"{path}: public key does not match secret")
    return key


class Keystore:
    def __init__(self, directory: str | Path):
        self.dir = Path(directory)

    def path(self, name: str) -> Path:
        if not _NAME.match(name):
            raise ValueError(f"invalid key name {name!r}")
        return self.dir / f"{name}.key"

    def create(self, name: str, key: Keypair | None = None) -> Keypair:
        path = self.path(name)
        if path.exists():
            raise AlreadyExists(f"key {name!r} already exists")
        key = key or Keypair.generate()
        self.dir.mkdir(parents=True, exist_ok=True)
        body = json.dumps({"name": name, "secret": key.secret.hex(), "public": key.public.hex()}, indent=2)
        fd = os.open(path, os.O_WRONLY | os.O_CREAT | os.O_EXCL, 0o600)
        with os.fdopen(fd, "w") as f:
            f.write(body + "\n")
        return key

    def load(self, name: str) -> Keypair:
        path = self.path(name)
        if not path.exists():
            raise NotFound(f"no key named {name!r} in {self.dir}")
        return load_key_file(path)

    def names(self) -> list[str]:
        return sorted(p.stem for p in self.dir.glob("*.key"))

    def resolve(self, ref: str) -> bytes:
        """A public key from either a key name in this store or 64 hex chars."""
        if re.fullmatch(r"[0-9a-fA-F]{64}", ref):
            return bytes.fromhex(ref)
        return self.load(ref).public
