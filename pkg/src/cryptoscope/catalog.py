"""Machine-readable catalog of JCA crypto classes, primitives and categories.

The catalog is data: a JSON document with ``classes``, ``primitives`` and
``defaults`` plus a ``schema_version``.  The shipped default covers every
primitive discussed in the Android crypto-usage literature and can be
extended without touching code.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Optional, Union

from .errors import ParseError, ValidationError

SCHEMA_VERSION = 1
JCA_PACKAGES = ("javax.crypto", "java.security")
UNKNOWN = "Unknown"
OBFUSCATED = "<obfuscated>"


class Category(str, Enum):
    HASH = "Hash"
    SYMMETRIC = "SymmetricEnc"
    PUBLIC_KEY = "PublicKeyEnc"
    SIGNATURE = "DigitalSignature"
    MAC = "MAC"
    PRNG = "PRNG"
    KEY_AGREEMENT = "KeyAgreement"
    OTHER = "Other"
    # Cipher constructors whose primitive is unknown: symmetric and RSA
    # cannot be told apart, so they are pooled instead of guessed.
    UNRESOLVED = "Unresolved"


PRIMITIVE_CATEGORIES = tuple(c for c in Category if c is not Category.UNRESOLVED)


class Strength(str, Enum):
    WEAK = "Weak"
    ACCEPTED = "Accepted"


class Mode(str, Enum):
    ECB = "ECB"
    CBC = "CBC"
    CFB = "CFB"
    CFB8 = "CFB8"
    OFB = "OFB"
    CTR = "CTR"
    GCM = "GCM"
    CTS = "CTS"
    PCBC = "PCBC"
    NONE = "NONE"
    OTHER = "Other"


class Padding(str, Enum):
    NONE = "NoPadding"
    PKCS5 = "PKCS5Padding"
    PKCS7 = "PKCS7Padding"
    PKCS1 = "PKCS1Padding"
    OAEP = "OAEPPadding"
    ISO10126 = "ISO10126Padding"
    ZEROBYTE = "ZeroBytePadding"
    OTHER = "Other"


_PADDING_KEYS = {
    "NO": Padding.NONE,
    "NONE": Padding.NONE,
    "PKCS5": Padding.PKCS5,
    "PKCS7": Padding.PKCS7,
    "PKCS1": Padding.PKCS1,
    "ISO10126": Padding.ISO10126,
    "ZEROBYTE": Padding.ZEROBYTE,
}


def parse_mode(text: str) -> Mode:
    key = text.strip().upper()
    try:
        return Mode(key)
    except ValueError:
        return Mode.OTHER


def parse_padding(text: str) -> Padding:
    key = text.strip().upper()
    if key.endswith("PADDING"):
        key = key[: -len("PADDING")]
    if key.startswith("OAEP"):
        return Padding.OAEP
    return _PADDING_KEYS.get(key, Padding.OTHER)


def normalized_padding(padding: Padding, block_bits: int = 128) -> Padding:
    """Aggregate view: PKCS5 padding on a 128-bit block cipher is PKCS7."""
    if padding is Padding.PKCS5 and block_bits == 128:
        return Padding.PKCS7
    return padding


@dataclass(frozen=True)
class PrimitiveSpec:
    name: str
    category: Category
    aliases: tuple[str, ...] = ()
    strength: Strength = Strength.ACCEPTED

    @property
    def weak(self) -> bool:
        return self.strength is Strength.WEAK


@dataclass(frozen=True)
class ApiClassSpec:
    simple_name: str
    package: str
    constructor_methods: tuple[str, ...]
    fallback_category: Category = Category.OTHER
    # primitive reported for argument-less direct construction (``new X()``)
    implicit_primitive: Optional[str] = None

    @property
    def qualified_name(self) -> str:
        return f"{self.package}.{self.simple_name}"


@dataclass(frozen=True)
class Transformation:
    primitive: Optional[PrimitiveSpec]
    mode: Mode
    padding: Padding

    @property
    def primitive_name(self) -> str:
        return self.primitive.name if self.primitive else UNKNOWN


@dataclass(frozen=True)
class PatternCatalog:
    classes: tuple[ApiClassSpec, ...]
    primitives: tuple[PrimitiveSpec, ...]
    transformation_defaults: tuple[Mode, Padding] = (Mode.ECB, Padding.PKCS7)
    native_libs: tuple[str, ...] = ()
    _by_alias: dict = field(default_factory=dict, repr=False, compare=False)
    _by_class: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        for p in self.primitives:
            for spelling in (p.name, *p.aliases):
                self._by_alias[spelling.lower()] = p
        for c in self.classes:
            self._by_class[c.simple_name] = c

    def lookup(self, name: str) -> Optional[PrimitiveSpec]:
        """Case-insensitive primitive lookup by name or alias."""
        return self._by_alias.get(name.strip().lower())

    def api_class(self, simple_name: str) -> ApiClassSpec:
        return self._by_class[simple_name]

    @property
    def class_names(self) -> tuple[str, ...]:
        return tuple(c.simple_name for c in self.classes)

    def parse_transformation(self, raw: str) -> Transformation:
        parts = [s.strip() for s in raw.split("/", 2)]
        default_mode, default_padding = self.transformation_defaults
        mode = parse_mode(parts[1]) if len(parts) > 1 and parts[1] else default_mode
        padding = parse_padding(parts[2]) if len(parts) > 2 and parts[2] else default_padding
        return Transformation(self.lookup(parts[0]), mode, padding)

    def categorize(self, api_class: Union[ApiClassSpec, str],
                   primitive: Optional[PrimitiveSpec]) -> Category:
        if isinstance(api_class, str):
            api_class = self.api_class(api_class)
        if primitive is not None:
            return primitive.category
        return api_class.fallback_category


def _parse_category(value, where: str) -> Category:
    try:
        return Category(value)
    except ValueError:
        raise ValidationError(f"{where}: unknown category {value!r}") from None


def catalog_from_dict(doc: dict) -> PatternCatalog:
    if not isinstance(doc, dict):
        raise ParseError("catalog must be a JSON object")
    if "schema_version" not in doc:
        raise ValidationError("catalog is missing schema_version")
    if doc["schema_version"] != SCHEMA_VERSION:
        raise ValidationError(f"unsupported catalog schema_version {doc['schema_version']!r}")
    for key in ("classes", "primitives", "defaults"):
        if key not in doc:
            raise ValidationError(f"catalog is missing {key!r}")

    primitives = []
    seen: dict[str, str] = {}
    for i, entry in enumerate(doc["primitives"]):
        where = f"primitives[{i}]"
        try:
            name = entry["name"]
            category = _parse_category(entry["category"], where)
            strength = Strength(entry.get("strength", "Accepted"))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ValidationError(f"{where}: malformed entry ({exc})") from None
        if category is Category.UNRESOLVED:
            raise ValidationError(f"{where}: primitives cannot be Unresolved")
        aliases = tuple(entry.get("aliases", ()))
        for spelling in (name, *aliases):
            key = spelling.lower()
            if key in seen and seen[key] != name:
                raise ValidationError(f"{where}: {spelling!r} already used by {seen[key]!r}")
            if key in seen and spelling == name:
                raise ValidationError(f"{where}: duplicate primitive name {name!r}")
            seen[key] = name
        primitives.append(PrimitiveSpec(name, category, aliases, strength))

    names = {p.name.lower() for p in primitives}
    classes = []
    for i, entry in enumerate(doc["classes"]):
        where = f"classes[{i}]"
        try:
            simple = entry["simple_name"]
            package = entry["package"]
            methods = tuple(entry["constructor_methods"])
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"{where}: malformed entry ({exc})") from None
        if package not in JCA_PACKAGES:
            raise ValidationError(f"{where}: package {package!r} is not a JCA package")
        if not methods:
            raise ValidationError(f"{where}: constructor_methods is empty")
        implicit = entry.get("implicit_primitive")
        if implicit is not None and implicit.lower() not in names:
            raise ValidationError(f"{where}: references unknown primitive {implicit!r}")
        fallback = _parse_category(entry.get("fallback_category", "Other"), where)
        classes.append(ApiClassSpec(simple, package, methods, fallback, implicit))
    if len({c.simple_name for c in classes}) != len(classes):
        raise ValidationError("duplicate class simple_name")

    defaults = doc["defaults"]
    pair = (parse_mode(defaults.get("mode", "")), parse_padding(defaults.get("padding", "")))
    if pair != (Mode.ECB, Padding.PKCS7):
        raise ValidationError("transformation defaults must be ECB/PKCS7")

    return PatternCatalog(
        classes=tuple(classes),
        primitives=tuple(primitives),
        transformation_defaults=pair,
        native_libs=tuple(doc.get("native_libs", ())),
    )


def load_catalog(path: Union[str, Path]) -> PatternCatalog:
    """Load and validate a catalog file; ``"default"`` selects the shipped one."""
    if str(path) == "default":
        return default_catalog()
    text = Path(path).read_text(encoding="utf-8")
    if not text.strip():
        raise ParseError(f"{path}: empty catalog file")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from None
    return catalog_from_dict(doc)


def default_catalog_text() -> str:
    return resources.files("cryptoscope.data").joinpath("default_catalog.json").read_text("utf-8")


@lru_cache(maxsize=None)
def default_catalog() -> PatternCatalog:
    return catalog_from_dict(json.loads(default_catalog_text()))


def parse_transformation(raw: str, catalog: Optional[PatternCatalog] = None) -> Transformation:
    return (catalog or default_catalog()).parse_transformation(raw)


def categorize(api_class: Union[ApiClassSpec, str], primitive: Optional[PrimitiveSpec],
               catalog: Optional[PatternCatalog] = None) -> Category:
    return (catalog or default_catalog()).categorize(api_class, primitive)
