"""Thin HTTP client for the node API."""
from __future__ import annotations

import json
import time
import urllib.error
import urllib.request
from typing import Optional
from urllib.parse import quote

from rlchain.block import Block, GenesisConfig, decode_block
from rlchain.errors import RLError, error_for_code
from rlchain.tx import Transaction, canonical_serialize, tx_hash


class Unreachable(RLError):
    code = "UNREACHABLE"


class Timeout(RLError):
    code = "TIMEOUT"


class NodeClient:
    def __init__(self, base_url: str, timeout: float = 10.0):
        self.base = base_url.rstrip("/")
        self.timeout = timeout

    def _call(self, path: str, body: Optional[dict] = None) -> dict:
        data = None if body is None else json.dumps(body).encode()
        req = urllib.request.Request(self.base + path, data=data,
                                     headers={"Content-Type": "application/json"})
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                return json.loads(resp.read())
        except urllib.error.HTTPError as exc:
            try:
                obj = json.loads(exc.read())
            except ValueError:
                raise error_for_code("HTTP_ERROR", f"HTTP {exc.code}") from None
            if "error" in obj:
                raise error_for_code(obj["error"], obj.get("message", "")) from None
            return obj
        except (urllib.error.URLError, ConnectionError, OSError) as exc:
            raise Unreachable(f"{self.base}: {exc}") from None

    def get(self, *parts: str) -> dict:
        return self._call("/" + "/".join(quote(str(p), safe="") for p in parts))

    def submit(self, tx: Transaction | str) -> dict:
        raw = tx if isinstance(tx, str) else canonical_serialize(tx).hex()
        return self._call("/tx", {"tx": raw})

    def status(self) -> dict:
        return self.get("status")

    def genesis(self) -> GenesisConfig:
        return GenesisConfig.from_json(self.get("genesis")["genesis"])

    def next_nonce(self, key: bytes) -> int:
        acct = self.get("account", key.hex())
        used = [n for n in (acct["last_nonce"], acct["pending_nonce"]) if n is not None]
        return max(used, default=0) + 1

    def wait(self, h: bytes, timeout: float = 30.0, poll: float = 0.05) -> dict:
        deadline = time.monotonic() + timeout
        while True:
            st = self.get("tx", h.hex())
            if st["status"] in ("committed", "dropped"):
                return st
            if time.monotonic() > deadline:
                raise Timeout(f"transaction {h.hex()[:16]} not committed after {timeout}s")
            time.sleep(poll)

    def submit_and_wait(self, tx: Transaction, timeout: float = 30.0) -> dict:
        reply = self.submit(tx)
        if reply.get("status") != "accepted":
            raise error_for_code(reply.get("reason") or "REJECTED", reply.get("message", ""))
        st = self.wait(tx_hash(tx), timeout)
        if st["status"] == "dropped":
            code, _, msg = st["reason"].partition(": ")
            raise error_for_code(code, msg)
        return st

    def blocks(self) -> list[Block]:
        tip = self.status()["height"]
        return [decode_block(bytes.fromhex(self.get("block", str(h))["hex"])) for h in range(tip + 1)]
