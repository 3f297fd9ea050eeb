#!/usr/bin/env python3
"""Validates every server JSON text frame in the golden transcripts against docs/protocol-v1.schema.json."""
import json
import struct
import sys
from pathlib import Path

import jsonschema

ROOT = Path(__file__).resolve().parent.parent


def frames(data):
    i = 0
    while i < len(data):
        op = data[i] & 0x0F
        masked = data[i + 1] & 0x80
        n = data[i + 1] & 0x7F
        i += 2
        if n == 126:
            n = struct.unpack(">H", data[i:i + 2])[0]
            i += 2
        elif n == 127:
            n = struct.unpack(">Q", data[i:i + 8])[0]
            i += 8
        key = b""
        if masked:
            key = data[i:i + 4]
            i += 4
        payload = data[i:i + n]
        if key:
            payload = bytes(b ^ key[k % 4] for k, b in enumerate(payload))
        i += n
        yield op, payload


def main():
    schema = json.loads((ROOT / "docs/protocol-v1.schema.json").read_text())
    validator = jsonschema.Draft202012Validator(schema)
    checked = 0
    failures = []
    for path in sorted((ROOT / "tests/fixtures/protocol").glob("*.transcript")):
        lines = [l for l in path.read_text().splitlines() if l and l[0] in "<>"]
        for sent, answered in zip(lines[0::2], lines[1::2]):
            client, server = bytes.fromhex(sent[2:]), bytes.fromhex(answered[2:])
            if client.startswith(b"GET "):
                continue
            replies = [json.loads(p) for op, p in frames(server) if op == 1]
            for msg in replies:
                errors = list(validator.iter_errors(msg))
                if errors:
                    failures.append(f"{path.name}: server {msg}: {errors[0].message}")
                checked += 1
            # A command the server acked must itself conform to the schema.
            if any(r.get("type") == "ack" for r in replies):
                for op, p in frames(client):
                    if op == 1:
                        msg = json.loads(p)
                        errors = list(validator.iter_errors(msg))
                        if errors:
                            failures.append(f"{path.name}: client {msg}: {errors[0].message}")
                        checked += 1
    for f in failures:
        print(f)
    print(f"{checked} messages checked, {len(failures)} schema violations")
    return 1 if failures or checked == 0 else 0


if __name__ == "__main__":
    sys.exit(main())
