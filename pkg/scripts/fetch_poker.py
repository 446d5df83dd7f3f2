#!/usr/bin/env python3
"""Download the UCI Poker Hand dataset with trust-on-first-use pinning.

Usage: python3 scripts/fetch_poker.py [DEST_DIR]

Writes poker-hand-training-true.data and poker-hand-testing.data into
DEST_DIR (default data/poker).  On first successful download the files'
sha256 digests are recorded in poker.lock.json next to this script; later
runs verify against the lock and refuse silently changed upstream files.

If the UCI mirror is unreachable, generate an offline stand-in instead:
    paintbox gen-poker -o data/poker
The surrogate reproduces the official per-class counts exactly, but it is
not the official data; accuracy numbers on it are indicative only.
"""

import hashlib
import json
import sys
import urllib.request
from pathlib import Path

BASE_URL = "https://archive.ics.uci.edu/ml/machine-learning-databases/poker"
FILES = {
    "poker-hand-training-true.data": 25010,
    "poker-hand-testing.data": 1000000,
}
LOCK_PATH = Path(__file__).with_name("poker.lock.json")


def sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def main() -> int:
    dest = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("data/poker")
    dest.mkdir(parents=True, exist_ok=True)
    lock = json.loads(LOCK_PATH.read_text()) if LOCK_PATH.exists() else {}

    for name, expected_rows in FILES.items():
        target = dest / name
        if not target.exists():
            url = f"{BASE_URL}/{name}"
            print(f"fetching {url}")
            try:
                with urllib.request.urlopen(url, timeout=120) as resp:
                    target.write_bytes(resp.read())
            except OSError as exc:
                print(f"download failed: {exc}", file=sys.stderr)
                print("offline? use: paintbox gen-poker -o", dest, file=sys.stderr)
                return 1

        rows = sum(1 for line in target.open() if line.strip())
        if rows != expected_rows:
            print(f"{name}: expected {expected_rows} rows, found {rows}", file=sys.stderr)
            return 1

        digest = sha256(target)
        if name in lock and lock[name] != digest:
            print(f"{name}: sha256 mismatch against {LOCK_PATH.name}", file=sys.stderr)
            print(f"  locked:  {lock[name]}", file=sys.stderr)
            print(f"  current: {digest}", file=sys.stderr)
            return 1
        lock.setdefault(name, digest)
        print(f"{name}: {rows} rows, sha256 {digest[:16]}... ok")

    LOCK_PATH.write_text(json.dumps(lock, indent=2, sort_keys=True) + "\n")
    print(f"lockfile -> {LOCK_PATH}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
