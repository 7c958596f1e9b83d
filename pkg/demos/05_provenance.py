"""
Content-addressed sources and a provenance manifest
===================================================

Sources are cached under their sha256; a second fetch never touches the
network, and a tampered download is quarantined instead of cached. The
manifest is canonical, so listing order does not matter.
"""
import tempfile
from pathlib import Path

from satheritage.archive import MemoryTransport, fetch, manifest_entry, render_manifest
from satheritage.errors import ChecksumMismatch
from satheritage.registry import load_registry

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "tests" / "fixtures"
registry = load_registry(FIXTURES / "registry")
cache = Path(tempfile.mkdtemp(prefix="satex-cache-"))

# an offline stand-in for the archive mirror
mirror = MemoryTransport({
    e.source.url: (FIXTURES / "sources" / e.source.url.rsplit("/", 1)[1]).read_bytes()
    for e in registry.entries()
})

entries = []
for entry in registry.entries():
    path = fetch(entry.source, cache, mirror)
    entries.append(manifest_entry(entry.spec, entry.source, path, fetched_at="2020-01-01T00:00:00Z"))
print("downloads:", mirror.calls)

for entry in registry.entries():
    fetch(entry.source, cache, mirror)
print("downloads after a second pass:", mirror.calls)

# a mirror serving different bytes
evil = MemoryTransport({registry.entry("toy:2000").source.url: b"not the toy release"})
try:
    fetch(registry.entry("toy:2000").source, Path(tempfile.mkdtemp()), evil)
except ChecksumMismatch as exc:
    print("rejected:", exc.quarantine.name)

print(render_manifest(entries) == render_manifest(reversed(entries)))
print(render_manifest(entries)[:600])
