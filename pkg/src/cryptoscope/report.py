"""Per-sample crypto reports and corpus-level statistics."""

from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

from .catalog import Category, PatternCatalog, UNKNOWN, default_catalog
from .errors import EmptyCorpus, ParseError
from .scanner import ManifestEntry, SampleScan

REPORT_SCHEMA = 1
CATEGORY_ORDER = tuple(Category)
SYMMETRIC_COLUMNS = ("AES", "DES", "DESede", "RC4", "Blowfish", "Other", "Unknown")

# reference literals from the published cohort tables (dataset -> (#APKs, #call sites, per 10k))
REFERENCE_COHORTS = {
    "CryptoLint-B12": (145095, 20967, 1445),
    "BinSight-B16": (115683, 78163, 7006),  # not arithmetically reproducible, kept as literal
    "Androzoo-B12": (39838, 81698, 20507),
    "Androzoo-B16": (37493, 124705, 33260),
    "Androzoo-M12": (39767, 125225, 31489),
    "Androzoo-M16": (39325, 208625, 53051),
}
REFERENCE_CATEGORIES = {
    # category -> (#call sites, %obfuscated, %APK)
    Category.HASH: (424858, 16.8, 39.7),
    Category.SYMMETRIC: (165994, 25.9, 19.4),
    Category.PUBLIC_KEY: (13262, 25.9, 1.5),
    Category.SIGNATURE: (17505, 81.4, 4.5),
    Category.MAC: (11661, 46.4, 3.0),
    Category.PRNG: (10381, 6.6, 2.9),
    Category.KEY_AGREEMENT: (87, 29.9, 0.0),
}
REFERENCE_TOTAL_CALL_SITES = 646018

_IMPORT_CATEGORIES = {
    "java.security.MessageDigest": Category.HASH,
    "java.security.DigestInputStream": Category.HASH,
    "java.security.DigestOutputStream": Category.HASH,
    "javax.crypto.Cipher": Category.SYMMETRIC,
    "javax.crypto.CipherInputStream": Category.SYMMETRIC,
    "javax.crypto.CipherOutputStream": Category.SYMMETRIC,
    "javax.crypto.KeyGenerator": Category.SYMMETRIC,
    "javax.crypto.SecretKey": Category.SYMMETRIC,
    "javax.crypto.spec.SecretKeySpec": Category.SYMMETRIC,
    "javax.crypto.spec.IvParameterSpec": Category.SYMMETRIC,
    "javax.crypto.spec.DESKeySpec": Category.SYMMETRIC,
    "javax.crypto.spec.PBEKeySpec": Category.SYMMETRIC,
    "java.security.KeyPairGenerator": Category.PUBLIC_KEY,
    "java.security.KeyFactory": Category.PUBLIC_KEY,
    "java.security.PublicKey": Category.PUBLIC_KEY,
    "java.security.PrivateKey": Category.PUBLIC_KEY,
    "java.security.KeyPair": Category.PUBLIC_KEY,
    "java.security.spec.X509EncodedKeySpec": Category.PUBLIC_KEY,
    "java.security.spec.PKCS8EncodedKeySpec": Category.PUBLIC_KEY,
    "java.security.spec.RSAPublicKeySpec": Category.PUBLIC_KEY,
    "java.security.Signature": Category.SIGNATURE,
    "javax.crypto.Mac": Category.MAC,
    "java.security.SecureRandom": Category.PRNG,
    "javax.crypto.KeyAgreement": Category.KEY_AGREEMENT,
}


def import_category(imported: str) -> Category:
    return _IMPORT_CATEGORIES.get(imported, Category.OTHER)


@dataclass
class CategoryCounts:
    call_sites: int = 0
    obfuscated: int = 0
    unknown: int = 0
    primitives: Counter = field(default_factory=Counter)

    @property
    def distinct(self) -> int:
        return len(self.primitives)

    def to_dict(self) -> dict:
        return {"call_sites": self.call_sites, "obfuscated": self.obfuscated,
                "unknown": self.unknown, "primitives": dict(sorted(self.primitives.items()))}

    @classmethod
    def from_dict(cls, d: dict) -> "CategoryCounts":
        return cls(d["call_sites"], d["obfuscated"], d["unknown"], Counter(d["primitives"]))


@dataclass
class CryptoReport:
    id: str
    label: str
    year: int
    market: str = ""
    categories: dict = field(default_factory=lambda: {c: CategoryCounts() for c in CATEGORY_ORDER})
    api_classes: dict = field(default_factory=dict)     # class -> {call_sites, obfuscated, unknown}
    primitives: Counter = field(default_factory=Counter)  # all resolved call sites by primitive
    imports: Counter = field(default_factory=Counter)     # import key -> count
    classes_importing: Counter = field(default_factory=Counter)  # category value -> #classes
    modes: Counter = field(default_factory=Counter)
    paddings: Counter = field(default_factory=Counter)
    schemes: Counter = field(default_factory=Counter)     # symmetric Cipher schemes, "AES*" = default
    java_libs: list = field(default_factory=list)
    native_libs: list = field(default_factory=list)
    n_classes: int = 0
    n_user_classes: int = 0
    n_third_party_classes: int = 0
    third_party_packages: list = field(default_factory=list)
    skipped: int = 0
    api_calls: dict = field(default_factory=dict)

    @property
    def malicious(self) -> bool:
        return self.label == "malicious"

    @property
    def total_call_sites(self) -> int:
        return sum(c.call_sites for c in self.categories.values())

    @property
    def total_imports(self) -> int:
        return sum(self.imports.values())

    def to_dict(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA,
            "sample": {"id": self.id, "label": self.label, "year": self.year, "market": self.market},
            "categories": {c.value: self.categories[c].to_dict() for c in CATEGORY_ORDER},
            "api_classes": {k: dict(v) for k, v in sorted(self.api_classes.items())},
            "primitives": dict(sorted(self.primitives.items())),
            "imports": dict(sorted(self.imports.items())),
            "classes_importing": dict(sorted(self.classes_importing.items())),
            "modes": dict(sorted(self.modes.items())),
            "paddings": dict(sorted(self.paddings.items())),
            "schemes": dict(sorted(self.schemes.items())),
            "java_libs": sorted(self.java_libs),
            "native_libs": sorted(self.native_libs),
            "n_classes": self.n_classes,
            "n_user_classes": self.n_user_classes,
            "n_third_party_classes": self.n_third_party_classes,
            "third_party_packages": sorted(self.third_party_packages),
            "skipped": self.skipped,
            "api_calls": dict(sorted(self.api_calls.items())),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "CryptoReport":
        if d.get("schema_version") != REPORT_SCHEMA:
            raise ParseError(f"unsupported report schema_version {d.get('schema_version')!r}")
        s = d["sample"]
        return cls(
            id=s["id"], label=s["label"], year=s["year"], market=s.get("market", ""),
            categories={c: CategoryCounts.from_dict(d["categories"][c.value]) for c in CATEGORY_ORDER},
            api_classes={k: dict(v) for k, v in d["api_classes"].items()},
            primitives=Counter(d["primitives"]), imports=Counter(d["imports"]),
            classes_importing=Counter(d["classes_importing"]),
            modes=Counter(d["modes"]), paddings=Counter(d["paddings"]), schemes=Counter(d["schemes"]),
            java_libs=list(d["java_libs"]), native_libs=list(d["native_libs"]),
            n_classes=d["n_classes"], n_user_classes=d["n_user_classes"],
            n_third_party_classes=d["n_third_party_classes"],
            third_party_packages=list(d["third_party_packages"]), skipped=d["skipped"],
            api_calls=dict(d.get("api_calls", {})),
        )


def build_report(scan: SampleScan) -> CryptoReport:
    s = scan.sample
    rep = CryptoReport(id=s.id, label=s.label, year=s.year, market=s.market)
    for site in scan.call_sites:
        cat = rep.categories[site.category]
        cat.call_sites += 1
        per_class = rep.api_classes.setdefault(site.api_class, {"call_sites": 0, "obfuscated": 0, "unknown": 0})
        per_class["call_sites"] += 1
        if site.obfuscated:
            cat.obfuscated += 1
            per_class["obfuscated"] += 1
        elif site.primitive == UNKNOWN:
            cat.unknown += 1
            per_class["unknown"] += 1
        else:
            cat.primitives[site.primitive] += 1
            rep.primitives[site.primitive] += 1
        if site.mode is not None:
            rep.modes[site.mode.value] += 1
            rep.paddings[site.padding.value] += 1
            if site.category is Category.SYMMETRIC:
                rep.schemes[_scheme_name(site)] += 1
    per_file: dict[str, set] = {}
    for imp in scan.imports:
        rep.imports[imp.key] += 1
        if not imp.wildcard:
            per_file.setdefault(imp.file, set()).add(import_category(imp.imported_class))
    for cats in per_file.values():
        for c in cats:
            rep.classes_importing[c.value] += 1
    rep.java_libs = sorted(scan.libs.java_libs)
    rep.native_libs = sorted(scan.libs.native_libs)
    rep.n_classes = scan.n_classes
    rep.n_user_classes = scan.origins.get("User", 0)
    rep.n_third_party_classes = scan.origins.get("ThirdParty", 0)
    rep.third_party_packages = list(scan.third_party_packages)
    rep.skipped = scan.skipped
    rep.api_calls = dict(scan.api_calls)
    return rep


def _scheme_name(site) -> str:
    if "/" not in site.raw_arg:
        return f"{site.primitive}*"
    return f"{site.primitive}/{site.mode.value}/{site.padding.value}"


def write_reports(reports: Iterable[CryptoReport], outdir: Union[str, Path]) -> list[Path]:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for r in reports:
        p = out / f"{r.id}.json"
        p.write_text(r.to_json(), encoding="utf-8")
        paths.append(p)
    return paths


def load_reports(directory: Union[str, Path]) -> list[CryptoReport]:
    """Load every ``*.json`` report in a directory, ordered by sample id."""
    reports = []
    for p in sorted(Path(directory).glob("*.json")):
        try:
            doc = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ParseError(f"{p}: {exc}") from None
        if not isinstance(doc, dict) or "sample" not in doc:
            continue
        reports.append(CryptoReport.from_dict(doc))
    reports.sort(key=lambda r: r.id)
    return reports


# --- arithmetic helpers ------------------------------------------------------

def per_10k(call_sites: int, samples: int) -> int:
    """Call sites scaled to a 10 000-sample corpus, truncated toward zero."""
    if samples <= 0:
        raise EmptyCorpus("per-10k normalisation needs at least one sample")
    return (call_sites * 10000) // samples


def percent(num: int, den: int) -> float:
    """``100*num/den`` rounded half-up to one decimal, computed exactly on integers."""
    if den <= 0:
        raise EmptyCorpus("percentage of an empty population")
    tenths = (num * 2000 + den) // (2 * den)
    return tenths / 10


# --- corpus aggregation ------------------------------------------------------

@dataclass
class GroupStats:
    n_samples: int = 0
    n_with_crypto: int = 0
    n_with_third_party: int = 0
    call_sites: int = 0
    cat_sites: Counter = field(default_factory=Counter)
    cat_obfuscated: Counter = field(default_factory=Counter)
    cat_apk: Counter = field(default_factory=Counter)
    cat_primitives: dict = field(default_factory=dict)   # category value -> set of primitives
    prim_sites: Counter = field(default_factory=Counter)
    prim_apk: Counter = field(default_factory=Counter)
    symmetric: Counter = field(default_factory=Counter)
    schemes: Counter = field(default_factory=Counter)
    java_libs: Counter = field(default_factory=Counter)
    native_libs: Counter = field(default_factory=Counter)

    def add(self, r: CryptoReport) -> None:
        self.n_samples += 1
        total = r.total_call_sites
        self.n_with_crypto += total > 0
        self.n_with_third_party += bool(r.third_party_packages)
        self.call_sites += total
        for c, cc in r.categories.items():
            if cc.call_sites:
                self.cat_sites[c.value] += cc.call_sites
                self.cat_obfuscated[c.value] += cc.obfuscated
                self.cat_apk[c.value] += 1
                self.cat_primitives.setdefault(c.value, set()).update(cc.primitives)
        for p, n in r.primitives.items():
            self.prim_sites[p] += n
            self.prim_apk[p] += 1
        sym = r.categories[Category.SYMMETRIC]
        for p, n in sym.primitives.items():
            self.symmetric[p if p in SYMMETRIC_COLUMNS else "Other"] += n
        self.symmetric["Unknown"] += sym.unknown + sym.obfuscated + r.categories[Category.UNRESOLVED].call_sites
        self.schemes.update(r.schemes)
        self.java_libs.update(r.java_libs)
        self.native_libs.update(r.native_libs)

    def merge(self, other: "GroupStats") -> "GroupStats":
        out = GroupStats()
        for name in ("n_samples", "n_with_crypto", "n_with_third_party", "call_sites"):
            setattr(out, name, getattr(self, name) + getattr(other, name))
        for name in ("cat_sites", "cat_obfuscated", "cat_apk", "prim_sites", "prim_apk",
                     "symmetric", "schemes", "java_libs", "native_libs"):
            setattr(out, name, getattr(self, name) + getattr(other, name))
        keys = set(self.cat_primitives) | set(other.cat_primitives)
        out.cat_primitives = {k: self.cat_primitives.get(k, set()) | other.cat_primitives.get(k, set())
                              for k in keys}
        return out


@dataclass
class CorpusStats:
    groups: dict  # (year, label) -> GroupStats
    by_label: dict  # label -> GroupStats
    overall: GroupStats

    def group(self, key=None) -> GroupStats:
        if key is None:
            return self.overall
        if isinstance(key, str):
            return self.by_label[key]
        return self.groups[key]


def group_name(year: Optional[int], label: str) -> str:
    return f"{label}-{year}" if year is not None else label


def aggregate(reports: Sequence[CryptoReport]) -> CorpusStats:
    reports = list(reports)
    if not reports:
        raise EmptyCorpus("no reports to aggregate")
    groups: dict = {}
    for r in reports:
        groups.setdefault((r.year, r.label), GroupStats()).add(r)
    groups = dict(sorted(groups.items()))
    by_label: dict = {}
    for (year, label), g in groups.items():
        by_label[label] = by_label[label].merge(g) if label in by_label else g.merge(GroupStats())
    overall = GroupStats()
    for g in by_label.values():
        overall = overall.merge(g)
    return CorpusStats(groups, dict(sorted(by_label.items())), overall)


def category_share(stats: Union[CorpusStats, GroupStats], category: Category, group=None) -> float:
    g = stats.group(group) if isinstance(stats, CorpusStats) else stats
    return percent(g.cat_sites[Category(category).value], g.call_sites)


def obfuscation_rate(stats: Union[CorpusStats, GroupStats], category: Category, group=None) -> Optional[float]:
    """Share of obfuscated call sites in a category; ``None`` (n/a) when it has none."""
    g = stats.group(group) if isinstance(stats, CorpusStats) else stats
    key = Category(category).value
    if not g.cat_sites[key]:
        return None
    return percent(g.cat_obfuscated[key], g.cat_sites[key])


def apk_share(stats: Union[CorpusStats, GroupStats], category: Category, group=None) -> float:
    g = stats.group(group) if isinstance(stats, CorpusStats) else stats
    return percent(g.cat_apk[Category(category).value], g.n_samples)


def symmetric_distribution(g: GroupStats) -> dict[str, Optional[float]]:
    total = sum(g.symmetric.values())
    return {col: (percent(g.symmetric[col], total) if total else None) for col in SYMMETRIC_COLUMNS}


# --- CSV output --------------------------------------------------------------

def _fmt(v) -> str:
    if v is None:
        return "n/a"
    if isinstance(v, float):
        return f"{v:.1f}"
    return str(v)


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _named_groups(stats: CorpusStats):
    for (year, label), g in stats.groups.items():
        yield group_name(year, label), g
    for label, g in stats.by_label.items():
        yield group_name(None, label), g
    yield "all", stats.overall


def write_stats(stats: CorpusStats, outdir: Union[str, Path]) -> list[Path]:
    """Write the table analogues and the plot-ready trend series as CSV."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    named = list(_named_groups(stats))

    _write_csv(out / "cohorts.csv", ["dataset", "n_apks", "user_call_sites", "call_sites_per_10k"],
               ([n, g.n_samples, g.call_sites, per_10k(g.call_sites, g.n_samples)] for n, g in named))

    rows = []
    for n, g in named:
        for c in CATEGORY_ORDER:
            rows.append([n, c.value, g.cat_sites[c.value],
                         category_share(g, c) if g.call_sites else None,
                         obfuscation_rate(g, c), apk_share(g, c),
                         len(g.cat_primitives.get(c.value, ()))])
        obf = sum(g.cat_obfuscated.values())
        rows.append([n, "Sum", g.call_sites, 100.0 if g.call_sites else None,
                     percent(obf, g.call_sites) if g.call_sites else None,
                     percent(g.n_with_crypto, g.n_samples), len(g.prim_sites)])
    _write_csv(out / "categories.csv",
               ["dataset", "category", "call_sites", "pct_of_call_sites", "pct_obfuscated", "pct_apk",
                "distinct_primitives"], rows)

    _write_csv(out / "symmetric.csv", ["dataset", *SYMMETRIC_COLUMNS],
               ([n, *symmetric_distribution(g).values()] for n, g in named))

    _write_csv(out / "schemes.csv", ["dataset", "scheme", "call_sites"],
               ([n, s, c] for n, g in named
                for s, c in sorted(g.schemes.items(), key=lambda kv: (-kv[1], kv[0]))))

    _write_csv(out / "primitives.csv", ["dataset", "primitive", "call_sites", "n_apk", "pct_apk"],
               ([n, p, g.prim_sites[p], g.prim_apk[p], percent(g.prim_apk[p], g.n_samples)]
                for n, g in named for p in sorted(g.prim_sites)))

    _write_csv(out / "libraries.csv", ["dataset", "kind", "library", "n_apk"],
               ([n, kind, lib, cnt] for n, g in named
                for kind, counter in (("java", g.java_libs), ("native", g.native_libs))
                for lib, cnt in sorted(counter.items())))

    trend_rows = []
    for (year, label), g in stats.groups.items():
        trend_rows += [
            [year, label, "pct_crypto_api", percent(g.n_with_crypto, g.n_samples)],
            [year, label, "pct_third_party", percent(g.n_with_third_party, g.n_samples)],
            [year, label, "pct_aes", percent(g.prim_apk["AES"], g.n_samples)],
            [year, label, "pct_des", percent(g.prim_apk["DES"], g.n_samples)],
        ]
    _write_csv(out / "trends.csv", ["year", "label", "metric", "value"], trend_rows)
    return sorted(out.glob("*.csv"))
