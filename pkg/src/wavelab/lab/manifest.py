"""Run manifests: config hash, version, timestamps and checksums of every output file."""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
import os
import tempfile
from dataclasses import asdict, dataclass, field

from .. import __version__

MANIFEST_NAME = "manifest.json"


class IntegrityError(RuntimeError):
    pass


def atomic_write(path: str, payload) -> None:
    """Write to a temporary file in the target folder, then rename over ``path``."""
    if isinstance(payload, str):
        payload = payload.encode("utf-8")
    folder = os.path.dirname(os.path.abspath(path))
    os.makedirs(folder, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    command: str
    scenario: str
    config_hash: str
    seed: int
    version: str = __version__
    started: str = field(default_factory=_now)
    finished: str = ""
    files: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    exit_code: int = 0

    def add(self, out_dir: str, name: str, payload) -> str:
        path = os.path.join(out_dir, name)
        atomic_write(path, payload)
        self.files.append({"name": name, "sha256": sha256_file(path), "bytes": os.path.getsize(path)})
        return path

    def write(self, out_dir: str) -> str:
        self.finished = _now()
        path = os.path.join(out_dir, MANIFEST_NAME)
        atomic_write(path, json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")
        return path


def load_manifest(path: str, verify: bool = True) -> RunManifest:
    """Read a manifest (file or folder) and check every listed checksum."""
    if os.path.isdir(path):
        path = os.path.join(path, MANIFEST_NAME)
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    m = RunManifest(**data)
    if verify:
        folder = os.path.dirname(os.path.abspath(path))
        for f in m.files:
            p = os.path.join(folder, f["name"])
            if not os.path.exists(p):
                raise IntegrityError(f"{p}: listed in the manifest but missing")
            if sha256_file(p) != f["sha256"]:
                raise IntegrityError(f"{p}: checksum mismatch")
    return m
