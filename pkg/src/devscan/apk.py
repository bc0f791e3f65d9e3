"""APK archive triage: entry listing and packer signature matching.

Only the central directory is read; entry bodies are never decompressed.
"""

from __future__ import annotations

import fnmatch
import zipfile
from dataclasses import dataclass
from pathlib import Path


class ApkError(ValueError):
    pass


class NotAZipError(ApkError):
    pass


class PackerKind:
    ENTRY_PATH = "entry_path"
    PACKAGE_PREFIX = "package_prefix"

    ALL = (ENTRY_PATH, PACKAGE_PREFIX)


@dataclass(frozen=True)
class ApkEntryList:
    entries: tuple[str, ...]
    total_count: int

    @classmethod
    def from_names(cls, names) -> "ApkEntryList":
        # duplicate central-directory names (a known hardening trick) are
        # collapsed to the first occurrence
        seen: dict[str, None] = {}
        for name in names:
            seen.setdefault(name)
        entries = tuple(seen)
        return cls(entries=entries, total_count=len(entries))


@dataclass(frozen=True)
class PackerSignature:
    packer_name: str
    patterns: tuple[str, ...]
    kind: str = PackerKind.ENTRY_PATH

    def __post_init__(self) -> None:
        if not self.packer_name:
            raise ApkError("packer signature without a name")
        if not self.patterns:
            raise ApkError(f"packer signature {self.packer_name} has no patterns")
        if self.kind not in PackerKind.ALL:
            raise ApkError(f"unknown signature kind {self.kind!r}")


@dataclass(frozen=True)
class PackingVerdict:
    packed: bool
    matched: tuple[tuple[str, str], ...] = ()


_ZIP_MAGICS = (b"PK\x03\x04", b"PK\x05\x06", b"PK\x07\x08")


def list_apk_entries(archive_path: str | Path) -> ApkEntryList:
    """List central-directory entry names of a ZIP container, in order."""
    path = Path(archive_path)
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic not in _ZIP_MAGICS:
        raise NotAZipError(f"{path}: not a ZIP archive (magic mismatch)")
    try:
        with zipfile.ZipFile(path) as zf:
            names = [info.filename for info in zf.infolist()]
    except zipfile.BadZipFile as exc:
        raise ApkError(f"{path}: truncated or corrupt archive: {exc}") from exc
    return ApkEntryList.from_names(names)


def _entry_matches(entry: str, pattern: str, kind: str) -> bool:
    if kind == PackerKind.ENTRY_PATH:
        return fnmatch.fnmatchcase(entry, pattern)
    # package_prefix: dotted package prefix matched against the entry path
    # on a segment boundary, so `com.qihoo.util` hits `com/qihoo/util/X`
    dotted = entry.rstrip("/").replace("/", ".")
    prefix = pattern.rstrip(".")
    return dotted == prefix or dotted.startswith(prefix + ".")


def detect_packing(
    entries: ApkEntryList, signatures: list[PackerSignature] | tuple[PackerSignature, ...]
) -> PackingVerdict:
    """Match archive entries against packer signatures.

    Pure over its inputs: the verdict lists every (packer, entry) pair,
    in signature order then entry order.
    """
    matched: list[tuple[str, str]] = []
    for sig in signatures:
        for pattern in sig.patterns:
            for entry in entries.entries:
                if _entry_matches(entry, pattern, sig.kind):
                    matched.append((sig.packer_name, entry))
    return PackingVerdict(packed=bool(matched), matched=tuple(matched))


def parse_packer_signatures(text: str, origin: str = "<signatures>") -> tuple[PackerSignature, ...]:
    """Parse `name<TAB>kind<TAB>pattern` rows, grouping rows by (name, kind)."""
    grouped: dict[tuple[str, str], list[str]] = {}
    order: list[tuple[str, str]] = []
    for line_no, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ApkError(f"{origin} line {line_no}: expected 3 tab-separated fields")
        name, kind, pattern = (p.strip() for p in parts)
        if not name or not pattern:
            raise ApkError(f"{origin} line {line_no}: empty field")
        if kind not in PackerKind.ALL:
            raise ApkError(f"{origin} line {line_no}: unknown kind {kind!r}")
        key = (name, kind)
        if key not in grouped:
            grouped[key] = []
            order.append(key)
        grouped[key].append(pattern)
    return tuple(
        PackerSignature(packer_name=name, patterns=tuple(grouped[(name, kind)]), kind=kind)
        for name, kind in order
    )


def load_packer_signatures(path: str | Path) -> tuple[PackerSignature, ...]:
    return parse_packer_signatures(Path(path).read_text(encoding="utf-8"), str(path))


def default_packer_signatures() -> tuple[PackerSignature, ...]:
    from importlib.resources import files

    text = (files("devscan") / "data" / "packer_signatures.tsv").read_text(encoding="utf-8")
    return parse_packer_signatures(text, "packer_signatures.tsv")
