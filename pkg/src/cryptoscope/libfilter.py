"""Origin classification (user / system / third-party) and crypto-library detection.

Third-party code is recognised by package-path prefix or, for renamed
packages, by a structural fingerprint: the hash of the sorted multiset of
per-class method counts inside a package directory.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

from ._lexer import mask_literals, matching_paren, string_literals, strip_comments
from .errors import ParseError, ValidationError

SYSTEM_ROOTS = ("java", "javax", "android", "kotlin")


class ClassOrigin(str, Enum):
    USER = "User"
    SYSTEM = "System"
    THIRD_PARTY = "ThirdParty"


class SignatureKind(str, Enum):
    THIRD_PARTY = "ThirdParty"
    CRYPTO_LIB_JAVA = "CryptoLibJava"


@dataclass(frozen=True)
class PackageSignature:
    prefix: str
    kind: SignatureKind
    label: str
    fingerprint: Optional[str] = None

    def matches_path(self, class_path: str) -> bool:
        return class_path == self.prefix or class_path.startswith(self.prefix + "/")


@dataclass(frozen=True)
class CryptoLibDetection:
    java_libs: frozenset = field(default_factory=frozenset)
    native_libs: frozenset = field(default_factory=frozenset)


def normalize_path(path: str) -> str:
    """``org.foo.Bar`` / ``org/foo/Bar.java`` / ``/org/foo/`` -> ``org/foo/Bar``."""
    p = path.replace("\\", "/").strip("/")
    if p.endswith(".java"):
        p = p[: -len(".java")]
    if "/" not in p:
        p = p.replace(".", "/")
    return p


def package_of(class_path: str) -> str:
    p = normalize_path(class_path)
    return p.rsplit("/", 1)[0] if "/" in p else ""


def is_system(class_path: str) -> bool:
    root = normalize_path(class_path).split("/", 1)[0]
    return root in SYSTEM_ROOTS


# --- structural fingerprints -------------------------------------------------

_KEYWORDS = {"if", "for", "while", "switch", "catch", "synchronized", "return", "new",
             "else", "throw", "do", "try", "case", "assert"}
_METHOD_RE = re.compile(
    r"^[ \t]*((?:[\w$.<>\[\],?]+[ \t]+)*?)([\w$]+)[ \t]*\([^;{}]*\)[ \t]*"
    r"(?:throws[ \t]+[\w$.,\s]+)?\{",
    re.MULTILINE,
)


def count_methods(text: str) -> int:
    """Count method and constructor declarations in a Java source file."""
    masked = mask_literals(strip_comments(text))
    n = 0
    for m in _METHOD_RE.finditer(masked):
        words = set(m.group(1).split()) | {m.group(2)}
        if words & _KEYWORDS or "=" in m.group(0).split("(")[0]:
            continue
        n += 1
    return n


def structure_fingerprint(method_counts: Iterable[int]) -> str:
    """Order-independent hash of a package's per-class method counts."""
    profile = ",".join(str(c) for c in sorted(method_counts))
    return hashlib.sha256(profile.encode()).hexdigest()[:16]


def fingerprint_package(directory: Union[str, Path]) -> str:
    """Fingerprint the ``.java`` classes directly inside ``directory``."""
    counts = [count_methods(p.read_text(encoding="utf-8", errors="replace"))
              for p in sorted(Path(directory).glob("*.java"))]
    return structure_fingerprint(counts)


# --- signature database ------------------------------------------------------

def signatures_from_list(entries: list) -> tuple[PackageSignature, ...]:
    if not isinstance(entries, list):
        raise ParseError("signature database must be a JSON array")
    out, seen = [], set()
    for i, e in enumerate(entries):
        try:
            prefix = normalize_path(e["prefix"])
            kind = SignatureKind(e["kind"])
            label = e["label"]
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"signatures[{i}]: malformed entry ({exc})") from None
        if not prefix:
            raise ValidationError(f"signatures[{i}]: empty prefix")
        if (prefix, kind) in seen:
            raise ValidationError(f"signatures[{i}]: duplicate ({prefix}, {kind.value})")
        seen.add((prefix, kind))
        out.append(PackageSignature(prefix, kind, label, e.get("fingerprint")))
    return tuple(out)


def load_signatures(path: Union[str, Path]) -> tuple[PackageSignature, ...]:
    if str(path) == "default":
        return default_signatures()
    text = Path(path).read_text(encoding="utf-8")
    try:
        entries = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from None
    return signatures_from_list(entries)


@lru_cache(maxsize=None)
def default_signatures() -> tuple[PackageSignature, ...]:
    text = resources.files("cryptoscope.data").joinpath("signatures.json").read_text("utf-8")
    return signatures_from_list(json.loads(text))


# --- classification ----------------------------------------------------------

def matching_signatures(class_path: str, signatures: Sequence[PackageSignature],
                        structure: Optional[str] = None) -> list[PackageSignature]:
    path = normalize_path(class_path)
    return [s for s in signatures
            if s.matches_path(path) or (structure is not None and s.fingerprint == structure)]


def classify_class(class_path: str, signatures: Sequence[PackageSignature] = (),
                   structure: Optional[str] = None) -> ClassOrigin:
    """Decide where a class comes from.

    ``structure`` is the fingerprint of the class's package, if known.
    Prefixes only match on path-segment boundaries.
    """
    if is_system(class_path):
        return ClassOrigin.SYSTEM
    if matching_signatures(class_path, signatures, structure):
        return ClassOrigin.THIRD_PARTY
    return ClassOrigin.USER


_LOAD_RE = re.compile(r"\b(?:ReLinker|System|Native)\s*\.\s*loadLibrary\s*\(")


def native_loads(text: str, native_libs: Sequence[str]) -> set[str]:
    """Native crypto libraries named inside ``*.loadLibrary(...)`` calls."""
    code = strip_comments(text)
    masked = mask_literals(code)
    found = set()
    lowered = [(name, name.lower()) for name in native_libs]
    for m in _LOAD_RE.finditer(masked):
        close = matching_paren(masked, m.end() - 1, m.end() + 2000)
        if close < 0:
            continue
        for lit in string_literals(code[m.end():close]):
            lit = lit.lower()
            found.update(name for name, low in lowered if low in lit)
    return found


def detect_crypto_libs(classes: Iterable[tuple[str, ClassOrigin, Optional[str]]],
                       user_texts: Iterable[str],
                       signatures: Sequence[PackageSignature],
                       native_libs: Sequence[str]) -> CryptoLibDetection:
    """Detect third-party crypto libraries shipped with a sample.

    ``classes`` yields ``(class_path, origin, package_fingerprint)`` triples
    produced by :func:`classify_class`; ``user_texts`` are the sources of the
    user-origin classes.
    """
    crypto_sigs = [s for s in signatures if s.kind is SignatureKind.CRYPTO_LIB_JAVA]
    java = set()
    for path, origin, structure in classes:
        if origin is not ClassOrigin.THIRD_PARTY:
            continue
        java.update(s.label for s in matching_signatures(path, crypto_sigs, structure))
    native = set()
    for text in user_texts:
        native |= native_loads(text, native_libs)
    return CryptoLibDetection(frozenset(java), frozenset(native))
