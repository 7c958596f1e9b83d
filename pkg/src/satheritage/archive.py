"""Checksum-verified fetching into a content-addressed cache, plus provenance manifests."""

from __future__ import annotations

import hashlib
import json
import os
import re
import threading
import urllib.error
import urllib.request
from collections import defaultdict
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path

from .errors import ChecksumMismatch, NetworkFailure, NotFound, UnverifiedEntry

SOURCE_ARCHIVE = "source-archive"
BINARY_ARCHIVE = "binary-archive"
SOURCE_KINDS = (SOURCE_ARCHIVE, BINARY_ARCHIVE)

_SHA256 = re.compile(r"^[0-9a-f]{64}$")
QUARANTINE_DIR = "quarantine"


def is_sha256(value: str) -> bool:
    return isinstance(value, str) and bool(_SHA256.match(value))


@dataclass(frozen=True)
class SourceRef:
    url: str
    sha256: str
    kind: str = SOURCE_ARCHIVE
    doi: str | None = None

    def __post_init__(self):
        if not self.url:
            raise ValueError("source url must be non-empty")
        if not is_sha256(self.sha256):
            raise ValueError(f"not a lowercase hex sha256: {self.sha256!r}")
        if self.kind not in SOURCE_KINDS:
            raise ValueError(f"source kind must be one of {SOURCE_KINDS}, got {self.kind!r}")


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for block in iter(lambda: handle.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


class HttpTransport:
    """urllib-backed transport; also understands ``file://`` URLs."""

    def __init__(self, timeout: float = 60.0):
        self.timeout = timeout
        self.calls = 0

    def get(self, url: str) -> bytes:
        self.calls += 1
        try:
            with urllib.request.urlopen(url, timeout=self.timeout) as response:
                return response.read()
        except urllib.error.HTTPError as exc:
            if exc.code in (404, 410):
                raise NotFound(f"{url}: HTTP {exc.code}") from exc
            raise NetworkFailure(f"{url}: HTTP {exc.code}") from exc
        except FileNotFoundError as exc:
            raise NotFound(f"{url}: no such file") from exc
        except (urllib.error.URLError, OSError) as exc:
            reason = getattr(exc, "reason", exc)
            if isinstance(reason, FileNotFoundError):
                raise NotFound(f"{url}: no such file") from exc
            raise NetworkFailure(f"{url}: {reason}") from exc


class MemoryTransport:
    """In-memory URL table for offline tests; counts every ``get``."""

    def __init__(self, blobs=None):
        self.blobs = dict(blobs or {})
        self.calls = 0
        self.requested = []
        self._lock = threading.Lock()

    def get(self, url: str) -> bytes:
        with self._lock:
            self.calls += 1
            self.requested.append(url)
        if url not in self.blobs:
            raise NotFound(url)
        blob = self.blobs[url]
        if isinstance(blob, Exception):
            raise blob
        return blob


def cache_path(cache, sha256: str) -> Path:
    return Path(cache) / sha256


_locks = defaultdict(threading.Lock)
_locks_guard = threading.Lock()


def _lock_for(key: str) -> threading.Lock:
    with _locks_guard:
        return _locks[key]


def fetch(source: SourceRef, cache, transport=None) -> Path:
    """Return the cached path for ``source``, downloading on a miss.

    A cached file whose bytes no longer match its name is moved to the
    quarantine directory and fetched again.
    """
    cache = Path(cache)
    target = cache_path(cache, source.sha256)
    with _lock_for(str(target.absolute())):
        if target.is_file():
            if sha256_file(target) == source.sha256:
                return target
            _quarantine(cache, target.read_bytes(), source.sha256)
            target.unlink()
        if transport is None:
            transport = HttpTransport()
        data = transport.get(source.url)
        actual = sha256_bytes(data)
        if actual != source.sha256:
            kept = _quarantine(cache, data, source.sha256)
            raise ChecksumMismatch(source.url, source.sha256, actual, kept)
        cache.mkdir(parents=True, exist_ok=True)
        partial = target.with_name(f".{target.name}.{os.getpid()}.{threading.get_ident()}.part")
        partial.write_bytes(data)
        os.replace(partial, target)
        return target


def _quarantine(cache: Path, data: bytes, expected: str) -> Path:
    folder = cache / QUARANTINE_DIR
    folder.mkdir(parents=True, exist_ok=True)
    kept = folder / f"{expected}.got-{sha256_bytes(data)}"
    kept.write_bytes(data)
    return kept


def audit_cache(cache) -> list:
    """Names of cache files whose content hash differs from their name."""
    cache = Path(cache)
    if not cache.is_dir():
        return []
    bad = []
    for path in sorted(cache.iterdir()):
        if path.is_file() and is_sha256(path.name) and sha256_file(path) != path.name:
            bad.append(path.name)
    return bad


@dataclass(frozen=True)
class ManifestEntry:
    spec: str
    url: str
    sha256: str
    fetched_at: str
    cache_path: str
    inputs_digest: str | None = None
    doi: str | None = None

    def as_dict(self) -> dict:
        return asdict(self)


def manifest_entry(spec, source: SourceRef, path, inputs_digest=None, fetched_at=None) -> ManifestEntry:
    if fetched_at is None:
        fetched_at = datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
    return ManifestEntry(
        spec=str(spec),
        url=source.url,
        sha256=source.sha256,
        fetched_at=fetched_at,
        cache_path=str(path),
        inputs_digest=inputs_digest,
        doi=source.doi,
    )


MANIFEST_FORMAT = "satex-provenance/1"


def render_manifest(entries) -> str:
    ordered = sorted((e.as_dict() for e in entries), key=lambda d: (d["spec"], d["sha256"], d["url"]))
    document = {"format": MANIFEST_FORMAT, "artifacts": ordered}
    return json.dumps(document, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def write_manifest(entries, out) -> Path:
    entries = list(entries)
    for entry in entries:
        path = Path(entry.cache_path)
        if not path.is_file():
            raise UnverifiedEntry(f"{entry.spec}: cached file {path} is missing")
        if sha256_file(path) != entry.sha256:
            raise UnverifiedEntry(f"{entry.spec}: {path} does not hash to {entry.sha256}")
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(render_manifest(entries).encode("utf-8"))
    return out


def read_manifest(path) -> list:
    document = json.loads(Path(path).read_text(encoding="utf-8"))
    return [ManifestEntry(**item) for item in document["artifacts"]]
