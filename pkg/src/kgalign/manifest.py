"""Run manifests.

Every command writes a ``run_manifest.json`` next to its outputs so a result
file can always be traced back to the exact invocation that produced it:
the command line, the fully resolved configuration, the RNG seeds, and
SHA-256 digests of every input consumed and output produced. Chaining the
digests across stages (the aligner's input embedding digest equals the
trainer's output digest) gives an audit trail without a database.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import time

from . import __version__

MANIFEST_NAME = "run_manifest.json"


@dataclasses.dataclass
class RunManifest:
    command: str
    argv: list
    config: dict
    seeds: dict
    inputs: dict
    outputs: dict
    version: str = __version__
    duration_seconds: float = 0.0

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def tree_digests(root) -> dict:
    """Digest every regular file under ``root``, keyed by relative path."""
    out = {}
    for dirpath, dirnames, filenames in os.walk(root):
        dirnames.sort()
        for name in sorted(filenames):
            full = os.path.join(dirpath, name)
            rel = os.path.relpath(full, root)
            out[rel] = file_digest(full)
    return out


def digest_paths(paths) -> dict:
    return {str(p): file_digest(p) for p in paths}


class ManifestTimer:
    """Context manager measuring wall-clock duration for the manifest."""

    def __enter__(self):
        self._start = time.monotonic()
        return self

    def __exit__(self, *exc):
        self.duration = time.monotonic() - self._start
        return False


def write_manifest(out_dir, man: RunManifest) -> str:
    """Atomically write the manifest into ``out_dir``."""
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, MANIFEST_NAME)
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(man.as_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)
    return path
