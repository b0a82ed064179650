"""On-disk cache of exact-basis computations.

Each entry is an ``.npz`` array bundle with a JSON sidecar holding
``schema_version``, ``element_hash``, ``p``, ``refine``, ``quad_order``
and a checksum of the array file.
"""

import hashlib
import json
import logging
import os
from pathlib import Path

import numpy as np

from .errors import CacheError

log = logging.getLogger(__name__)

SCHEMA_VERSION = 4


def default_cache_dir():
    return Path(os.environ.get("VEMSTAB_CACHE_DIR", Path.home() / ".cache" / "vemstab"))


def entry_name(element_hash, p, refine, quad_order, mesh_tag=""):
    raw = f"{element_hash}|{p}|{refine}|{quad_order}|{mesh_tag}|{SCHEMA_VERSION}"
    return hashlib.sha256(raw.encode()).hexdigest()[:24]


def _sha(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def save(cache_dir, meta, arrays):
    """Write arrays and sidecar; returns the entry name."""
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    name = entry_name(meta["element_hash"], meta["p"], meta["refine"], meta["quad_order"], meta.get("mesh_tag", ""))
    data = cache_dir / f"{name}.npz"
    tmp = cache_dir / f"{name}.tmp.npz"
    np.savez(tmp, **arrays)
    os.replace(tmp, data)
    side = dict(meta, schema_version=SCHEMA_VERSION, sha256=_sha(data))
    (cache_dir / f"{name}.json").write_text(json.dumps(side, indent=1, sort_keys=True))
    return name


def load(cache_dir, meta):
    """Arrays for `meta`, or None on a miss. Stale or corrupt entries are misses."""
    cache_dir = Path(cache_dir)
    name = entry_name(meta["element_hash"], meta["p"], meta["refine"], meta["quad_order"], meta.get("mesh_tag", ""))
    side = cache_dir / f"{name}.json"
    data = cache_dir / f"{name}.npz"
    if not (side.exists() and data.exists()):
        return None
    try:
        info = json.loads(side.read_text())
        if info.get("schema_version") != SCHEMA_VERSION:
            return None
        with np.load(data) as z:
            return {k: z[k] for k in z.files}
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        log.warning("ignoring unreadable cache entry %s: %s", name, exc)
        return None


def list_entries(cache_dir):
    cache_dir = Path(cache_dir)
    out = []
    if not cache_dir.exists():
        return out
    for side in sorted(cache_dir.glob("*.json")):
        try:
            info = json.loads(side.read_text())
        except (OSError, json.JSONDecodeError):
            info = {"error": "unreadable sidecar"}
        info["name"] = side.stem
        data = side.with_suffix(".npz")
        info["bytes"] = data.stat().st_size if data.exists() else 0
        out.append(info)
    return out


def clear(cache_dir):
    """Remove all entries; returns the number of files deleted."""
    cache_dir = Path(cache_dir)
    n = 0
    if not cache_dir.exists():
        return 0
    for f in list(cache_dir.glob("*.json")) + list(cache_dir.glob("*.npz")):
        f.unlink()
        n += 1
    return n


def verify(cache_dir):
    """Re-hash every entry. Returns a list of (name, status) pairs."""
    report = []
    for info in list_entries(cache_dir):
        name = info["name"]
        data = Path(cache_dir) / f"{name}.npz"
        if "error" in info:
            report.append((name, "corrupt sidecar"))
        elif info.get("schema_version") != SCHEMA_VERSION:
            report.append((name, "stale schema"))
        elif not data.exists():
            report.append((name, "missing data"))
        elif _sha(data) != info.get("sha256"):
            report.append((name, "checksum mismatch"))
        else:
            report.append((name, "ok"))
    return report


def require_dir(path):
    p = Path(path)
    if p.exists() and not p.is_dir():
        raise CacheError(f"cache path {p} is not a directory")
    return p
