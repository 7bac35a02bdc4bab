"""Crypto call-site and import extraction from user-authored Java sources."""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

from ._lexer import mask_literals, strip_comments
from .catalog import OBFUSCATED, UNKNOWN, Category, Mode, Padding, PatternCatalog
from .errors import MissingSample, ParseError, ValidationError
from .libfilter import (ClassOrigin, CryptoLibDetection, PackageSignature, classify_class,
                        count_methods, detect_crypto_libs, matching_signatures, normalize_path,
                        structure_fingerprint)

__all__ = ["strip_comments", "SourceClass", "CallSite", "ImportRecord", "ManifestEntry",
           "SampleScan", "scan_class", "scan_sample", "read_manifest", "scan_text"]

LABELS = ("benign", "malicious")
VT_THRESHOLD = 5
CONTINUATION_LINES = 2


@dataclass(frozen=True)
class SourceClass:
    path: str
    package: str
    origin: ClassOrigin
    text: str


@dataclass(frozen=True, order=True)
class CallSite:
    file: str
    line: int
    column: int
    api_class: str
    raw_arg: str
    primitive: str
    category: Category
    mode: Optional[Mode] = None
    padding: Optional[Padding] = None

    @property
    def obfuscated(self) -> bool:
        return self.raw_arg == OBFUSCATED

    def to_dict(self) -> dict:
        return {
            "file": self.file, "line": self.line, "column": self.column,
            "api_class": self.api_class, "raw_arg": self.raw_arg,
            "primitive": self.primitive, "category": self.category.value,
            "mode": self.mode.value if self.mode else None,
            "padding": self.padding.value if self.padding else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CallSite":
        return cls(d["file"], d["line"], d["column"], d["api_class"], d["raw_arg"],
                   d["primitive"], Category(d["category"]),
                   Mode(d["mode"]) if d.get("mode") else None,
                   Padding(d["padding"]) if d.get("padding") else None)


@dataclass(frozen=True, order=True)
class ImportRecord:
    file: str
    imported_class: str
    wildcard: bool = False

    @property
    def key(self) -> str:
        return self.imported_class + (".*" if self.wildcard else "")


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    label: str
    year: int
    path: str
    vt_flags: int = 0
    market: str = ""

    @property
    def malicious(self) -> bool:
        return self.label == "malicious"

    def to_dict(self) -> dict:
        return {"id": self.id, "label": self.label, "year": self.year, "path": self.path,
                "vt_flags": self.vt_flags, "market": self.market}


@dataclass
class SampleScan:
    sample: ManifestEntry
    n_classes: int = 0
    origins: Counter = field(default_factory=Counter)
    call_sites: list = field(default_factory=list)
    imports: list = field(default_factory=list)
    user_classes: list = field(default_factory=list)
    third_party_packages: list = field(default_factory=list)
    libs: CryptoLibDetection = field(default_factory=CryptoLibDetection)
    api_calls: dict = field(default_factory=dict)
    skipped: int = 0
    errors: list = field(default_factory=list)


# --- manifest ----------------------------------------------------------------

def parse_manifest_line(obj: dict, strict: bool = False) -> ManifestEntry:
    try:
        label = obj["label"]
        vt = int(obj.get("vt_flags", 0))
        if strict:
            label = "malicious" if vt >= VT_THRESHOLD else "benign"
        if label not in LABELS:
            raise ValueError(f"label must be benign|malicious, got {label!r}")
        return ManifestEntry(str(obj["id"]), label, int(obj["year"]), str(obj["path"]),
                             vt, str(obj.get("market", "")))
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"bad manifest entry: {exc}") from None


def read_manifest(path: Union[str, Path], strict: bool = False) -> list[ManifestEntry]:
    """Read a JSON-lines corpus manifest.

    With ``strict`` the label is re-derived from ``vt_flags`` (malicious when
    at least five scanners flag the sample).
    """
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
            try:
                entries.append(parse_manifest_line(obj, strict))
            except ValidationError as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from None
    return entries


# --- extraction --------------------------------------------------------------

_IMPORT_RE = re.compile(
    r"^[ \t]*import[ \t]+(?:static[ \t]+)?((?:javax\.crypto|java\.security)(?:\.[\w$]+)*?)"
    r"(\.\*)?[ \t]*;", re.MULTILINE)
_ANY_IMPORT_RE = re.compile(r"^[ \t]*import[ \t]+(?:static[ \t]+)?([\w$.]+?)(\.\*)?[ \t]*;",
                            re.MULTILINE)
_LITERAL_AT_RE = re.compile(r'"((?:[^"\\\n]|\\.)*)"')


@lru_cache(maxsize=32)
def _constructor_regex(catalog: PatternCatalog) -> re.Pattern:
    static, direct = [], []
    for c in catalog.classes:
        for m in c.constructor_methods:
            if m == "new":
                direct.append(re.escape(c.simple_name))
            else:
                static.append(f"{re.escape(c.simple_name)}\\s*\\.\\s*{re.escape(m)}")
    alts = []
    if static:
        alts.append(r"\b(?P<static>" + "|".join(static) + r")\s*\(")
    if direct:
        alts.append(r"\bnew\s+(?:[\w$]+\s*\.\s*)*(?P<direct>" + "|".join(direct) + r")\s*\(")
    return re.compile("|".join(alts))


def _line_starts(text: str) -> list[int]:
    starts = [0]
    starts.extend(i + 1 for i, ch in enumerate(text) if ch == "\n")
    return starts


def _window_end(text: str, pos: int, extra_lines: int) -> int:
    end = pos
    for _ in range(extra_lines + 1):
        nl = text.find("\n", end)
        if nl < 0:
            return len(text)
        end = nl + 1
    return end - 1


def _first_argument(code: str, masked: str, open_at: int) -> Optional[str]:
    """Literal first argument after ``(`` at ``open_at``.

    Returns the literal text, ``""`` for an empty argument list, or
    ``None`` when the argument is anything but a bare string literal.
    The search may run over up to two continuation lines.
    """
    end = _window_end(masked, open_at, CONTINUATION_LINES)
    i = open_at + 1
    while i < end and masked[i].isspace():
        i += 1
    if i >= end:
        return None
    if masked[i] == ")":
        return ""
    if masked[i] != '"':
        return None
    m = _LITERAL_AT_RE.match(code, i)
    if not m:
        return None
    j = m.end()
    while j < end and masked[j].isspace():
        j += 1
    if j < end and masked[j] in ",)":
        return m.group(1)
    return None


def scan_text(text: str, file: str, catalog: PatternCatalog) -> tuple[list[CallSite], list[ImportRecord]]:
    """Extract crypto call sites and JCA imports from one source text."""
    code = strip_comments(text)
    masked = mask_literals(code)
    starts = _line_starts(masked)
    sites = []
    for m in _constructor_regex(catalog).finditer(masked):
        if m.group("static") is not None:
            cls_name = re.split(r"\s*\.", m.group("static"))[0]
            direct = False
        else:
            cls_name = m.group("direct")
            direct = True
        spec = catalog.api_class(cls_name)
        pos = m.start()
        line = _bisect(starts, pos)
        column = pos - starts[line - 1] + 1
        arg = _first_argument(code, masked, m.end() - 1)
        mode = padding = None
        if direct or (arg == "" and spec.implicit_primitive):
            prim = catalog.lookup(spec.implicit_primitive) if spec.implicit_primitive else None
            raw = ""
        elif arg is None or arg == "":
            prim, raw = None, OBFUSCATED
        elif cls_name == "Cipher":
            t = catalog.parse_transformation(arg)
            prim, raw, mode, padding = t.primitive, arg, t.mode, t.padding
        else:
            prim, raw = catalog.lookup(arg), arg
        sites.append(CallSite(
            file=file, line=line, column=column, api_class=cls_name, raw_arg=raw,
            primitive=prim.name if prim else UNKNOWN,
            category=catalog.categorize(spec, prim), mode=mode, padding=padding))
    imports = [ImportRecord(file, m.group(1), bool(m.group(2))) for m in _IMPORT_RE.finditer(masked)]
    return sites, imports


def _bisect(starts: list[int], pos: int) -> int:
    lo, hi = 0, len(starts)
    while lo < hi:
        mid = (lo + hi) // 2
        if starts[mid] <= pos:
            lo = mid + 1
        else:
            hi = mid
    return lo


def scan_class(cls: SourceClass, catalog: PatternCatalog) -> tuple[list[CallSite], list[ImportRecord]]:
    if cls.origin is not ClassOrigin.USER:
        raise ValueError(f"{cls.path}: only user-origin classes may be scanned, got {cls.origin.value}")
    return scan_text(cls.text, cls.path, catalog)


# --- non-crypto API usage (baseline classifier input) ------------------------

@dataclass(frozen=True)
class ApiPackage:
    package: str
    classes: tuple[str, ...] = ()


def api_packages_from_dict(doc: dict) -> tuple[ApiPackage, ...]:
    try:
        return tuple(ApiPackage(p["package"], tuple(p.get("classes", ()))) for p in doc["packages"])
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"bad API package list: {exc}") from None


def load_api_packages(path: Union[str, Path]) -> tuple[ApiPackage, ...]:
    if str(path) == "default":
        return default_api_packages()
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from None
    return api_packages_from_dict(doc)


@lru_cache(maxsize=None)
def default_api_packages() -> tuple[ApiPackage, ...]:
    text = resources.files("cryptoscope.data").joinpath("baseline_apis.json").read_text("utf-8")
    return api_packages_from_dict(json.loads(text))


def count_api_calls(text: str, packages: Sequence[ApiPackage]) -> Counter:
    """Count references (``Name.m(`` / ``new Name(``) to imported classes of each package."""
    masked = mask_literals(strip_comments(text))
    wanted = {p.package for p in packages}
    owner = {}
    for m in _ANY_IMPORT_RE.finditer(masked):
        name = m.group(1)
        if m.group(2):
            continue
        pkg, _, simple = name.rpartition(".")
        if name in wanted:
            owner[simple] = name
        elif pkg in wanted:
            owner[simple] = pkg
    counts = Counter()
    if not owner:
        return counts
    names = "|".join(re.escape(s) for s in sorted(owner))
    pattern = re.compile(rf"(?<![\w$.])(?:({names})\s*\.\s*[\w$]+\s*\(|new\s+({names})\s*\()")
    body = _ANY_IMPORT_RE.sub("", masked)
    for m in pattern.finditer(body):
        counts[owner[m.group(1) or m.group(2)]] += 1
    return counts


# --- per-sample driver -------------------------------------------------------

def scan_sample(sample: ManifestEntry, catalog: PatternCatalog,
                signatures: Sequence[PackageSignature] = (),
                base_dir: Union[str, Path, None] = None,
                api_packages: Sequence[ApiPackage] = ()) -> SampleScan:
    """Classify every class of a sample and scan the user-authored ones."""
    root = Path(sample.path)
    if base_dir is not None and not root.is_absolute():
        root = Path(base_dir) / root
    if not root.is_dir():
        raise MissingSample(f"{sample.id}: sample root {root} does not exist")

    result = SampleScan(sample=sample)
    texts: dict[str, str] = {}
    for p in sorted(root.rglob("*.java")):
        rel = p.relative_to(root).as_posix()
        result.n_classes += 1
        try:
            texts[rel] = p.read_text(encoding="utf-8")
        except (OSError, UnicodeDecodeError) as exc:
            result.skipped += 1
            result.errors.append(f"{sample.id}:{rel}: unreadable ({type(exc).__name__})")

    fingerprints: dict[str, str] = {}
    if any(s.fingerprint for s in signatures):
        per_pkg: dict[str, list[int]] = {}
        for rel, text in texts.items():
            per_pkg.setdefault(_package_dir(rel), []).append(count_methods(text))
        fingerprints = {pkg: structure_fingerprint(c) for pkg, c in per_pkg.items()}

    classified = []
    third_party = set()
    user_texts = []
    for rel in sorted(texts):
        class_path = normalize_path(rel)
        structure = fingerprints.get(_package_dir(rel))
        origin = classify_class(class_path, signatures, structure)
        result.origins[origin.value] += 1
        classified.append((class_path, origin, structure))
        if origin is ClassOrigin.THIRD_PARTY:
            sigs = matching_signatures(class_path, signatures, structure)
            third_party.update(s.prefix for s in sigs)
        elif origin is ClassOrigin.USER:
            src = SourceClass(rel, _package_dir(rel), origin, texts[rel])
            sites, imports = scan_class(src, catalog)
            result.call_sites.extend(sites)
            result.imports.extend(imports)
            result.user_classes.append(rel)
            user_texts.append(texts[rel])

    result.call_sites.sort()
    result.imports.sort()
    result.third_party_packages = sorted(third_party)
    result.libs = detect_crypto_libs(classified, user_texts, signatures, catalog.native_libs)
    if api_packages:
        total = Counter()
        for text in user_texts:
            total.update(count_api_calls(text, api_packages))
        result.api_calls = {p.package: total.get(p.package, 0) for p in api_packages}
    return result


def _package_dir(rel: str) -> str:
    return rel.rsplit("/", 1)[0] if "/" in rel else ""


def scan_corpus(entries: Iterable[ManifestEntry], catalog: PatternCatalog,
                signatures: Sequence[PackageSignature] = (),
                base_dir: Union[str, Path, None] = None,
                api_packages: Sequence[ApiPackage] = (),
                workers: int = 1) -> list[SampleScan]:
    """Scan many samples; output order follows ``entries`` regardless of ``workers``."""
    from .parallel import ordered_map
    entries = list(entries)
    return ordered_map(_scan_one, [(e, catalog, tuple(signatures), base_dir, tuple(api_packages))
                                   for e in entries], workers=workers, processes=True)


def _scan_one(args) -> SampleScan:
    return scan_sample(*args)
