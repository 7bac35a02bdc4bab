"""Seeded synthetic corpora of decompiled-looking Java sources.

Each sample is a directory of ``.java`` files: user classes carrying sampled
crypto constructor calls, imports and non-crypto API calls, plus third-party
package directories and decoys (crypto text in comments, strings and
third-party code) that a correct extractor must ignore.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .catalog import Category, PatternCatalog, default_catalog
from .errors import ValidationError
from .parallel import ordered_map
from .scanner import ApiPackage, ManifestEntry, default_api_packages

PROFILE_SCHEMA = 1

# primitive -> (constructor form, literal spellings); "new" means direct construction
PRIMITIVE_FORMS = {
    "MD5": ("MessageDigest", ["MD5", "md5"]),
    "SHA-1": ("MessageDigest", ["SHA-1", "SHA1", "SHA"]),
    "SHA-256": ("MessageDigest", ["SHA-256", "SHA256"]),
    "SHA-384": ("MessageDigest", ["SHA-384"]),
    "SHA-512": ("MessageDigest", ["SHA-512"]),
    "AES": ("Cipher", None),
    "DES": ("Cipher", None),
    "DESede": ("Cipher", None),
    "RC4": ("Cipher", None),
    "Blowfish": ("Cipher", None),
    "PBEWithMD5AndDES": ("Cipher", ["PBEWithMD5AndDES"]),
    "RSA": ("Cipher", ["RSA", "RSA/ECB/PKCS1Padding", "RSA/ECB/OAEPWithSHA-256AndMGF1Padding"]),
    "SHA1withRSA": ("Signature", ["SHA1withRSA"]),
    "SHA256withRSA": ("Signature", ["SHA256withRSA"]),
    "SHA256withECDSA": ("Signature", ["SHA256withECDSA"]),
    "HmacSHA1": ("Mac", ["HmacSHA1", "HMACSHA1"]),
    "HmacSHA256": ("Mac", ["HmacSHA256", "HMACSHA256"]),
    "HmacMD5": ("Mac", ["HmacMD5"]),
    "SHA1PRNG": ("SecureRandom", ["SHA1PRNG"]),
    "NativePRNG": ("new", None),
    "DH": ("KeyAgreement", ["DH", "DiffieHellman"]),
    "ECDH": ("KeyAgreement", ["ECDH"]),
    "AndroidKeyStore": ("KeyStore", ["AndroidKeyStore"]),
    "BKS": ("KeyStore", ["BKS"]),
    "PBKDF2WithHmacSHA1": ("SecretKeyFactory", ["PBKDF2WithHmacSHA1"]),
}

# explicit (mode, padding) suffixes for block ciphers, weighted after the
# reported symmetric-scheme distribution; the default form is drawn separately
CIPHER_SUFFIXES = [
    ("CBC/PKCS5Padding", 0.55), ("ECB/PKCS5Padding", 0.12), ("ECB/NoPadding", 0.08),
    ("CBC/NoPadding", 0.06), ("CBC/PKCS7Padding", 0.05), ("CFB8/NoPadding", 0.03),
    ("GCM/NoPadding", 0.06), ("ECB/PKCS7Padding", 0.05),
]
STREAM_CIPHERS = {"RC4"}

_WORDS = ("alpha", "beta", "core", "data", "util", "net", "sync", "task", "view", "main", "pay",
          "sms", "game", "tool", "push", "ad", "media", "cloud", "secure", "helper", "service")
_MARKETS = ("play.google.com", "anzhi", "appchina")
_EXTRA_IMPORTS = ("javax.crypto.spec.SecretKeySpec", "javax.crypto.spec.IvParameterSpec",
                  "javax.crypto.SecretKey", "java.security.Key", "java.security.PublicKey",
                  "java.security.PrivateKey", "java.security.KeyPair", "javax.crypto.spec.DESKeySpec",
                  "java.security.spec.X509EncodedKeySpec", "javax.crypto.spec.PBEKeySpec",
                  "java.security.NoSuchAlgorithmException", "java.security.InvalidKeyException",
                  "javax.crypto.CipherInputStream", "java.security.DigestInputStream")


@dataclass
class GenProfile:
    name: str
    label: str
    year: int
    intensities: dict = field(default_factory=dict)       # primitive -> expected call sites / sample
    obfuscation: dict = field(default_factory=dict)       # category value -> P(argument obfuscated)
    crypto_free_prob: float = 0.0
    default_mode_prob: float = 0.5                        # Cipher literal without mode/padding
    third_party: dict = field(default_factory=dict)       # package prefix -> P(injected)
    native_libs: dict = field(default_factory=dict)       # library name -> P(loaded)
    extra_imports: float = 0.5                            # mean unused crypto imports / sample
    api_intensities: dict = field(default_factory=dict)   # API package -> mean calls / sample
    user_classes: float = 3.0                             # mean extra user classes (>= 1 always)
    decoy_prob: float = 0.3                               # P(decoy block per user class)

    def validate(self) -> None:
        if self.label not in ("benign", "malicious"):
            raise ValidationError(f"{self.name}: bad label {self.label!r}")
        probs = [self.crypto_free_prob, self.default_mode_prob, self.decoy_prob,
                 *self.obfuscation.values(), *self.third_party.values(), *self.native_libs.values()]
        if any(not 0.0 <= p <= 1.0 for p in probs):
            raise ValidationError(f"{self.name}: probabilities must lie in [0, 1]")
        rates = [self.extra_imports, self.user_classes, *self.intensities.values(),
                 *self.api_intensities.values()]
        if any(r < 0 for r in rates):
            raise ValidationError(f"{self.name}: intensities must be >= 0")
        unknown = set(self.intensities) - set(PRIMITIVE_FORMS)
        if unknown:
            raise ValidationError(f"{self.name}: no generator form for {sorted(unknown)}")

    def obfuscation_prob(self, primitive: str, catalog: PatternCatalog) -> float:
        if PRIMITIVE_FORMS[primitive][0] == "new":
            return 0.0
        return self.obfuscation.get(catalog.lookup(primitive).category.value, 0.0)

    def expected_resolved(self, primitive: str, catalog: Optional[PatternCatalog] = None) -> tuple[float, float]:
        """Mean and variance of the per-sample count of resolved call sites of ``primitive``."""
        catalog = catalog or default_catalog()
        lam = self.intensities.get(primitive, 0.0) * (1 - self.obfuscation_prob(primitive, catalog))
        q = self.crypto_free_prob
        mean = (1 - q) * lam
        var = (1 - q) * lam + q * (1 - q) * lam ** 2
        return mean, var


def _api_rates(label: str, packages: Sequence[ApiPackage]) -> dict:
    # weak, alternating label signal on otherwise generic API usage
    rates = {}
    for i, p in enumerate(packages):
        base = 0.6 + 0.35 * (i % 7)
        shift = 1.0 + (0.28 if i % 2 == 0 else -0.22) * (1 if label == "malicious" else -1) * 0.5
        rates[p.package] = round(base * shift, 4)
    return rates


_OBF_MALICIOUS = {"Hash": 0.168, "SymmetricEnc": 0.259, "PublicKeyEnc": 0.259, "DigitalSignature": 0.814,
                  "MAC": 0.464, "PRNG": 0.066, "KeyAgreement": 0.299, "Other": 0.2}
_OBF_BENIGN = {k: round(v / 2, 4) for k, v in _OBF_MALICIOUS.items()}


CALL_SCALE = 1.5  # multiplies every default intensity


def _scaled(rates: dict) -> dict:
    return {k: round(v * CALL_SCALE, 4) for k, v in rates.items()}


def default_profiles(packages: Sequence[ApiPackage] = ()) -> list[GenProfile]:
    """Four cohorts: benign/malicious x 2012/2016.

    Malware hashes mostly with MD5 and prefers DES before 2015; benign apps
    are AES-dominant and use more SHA-2.
    """
    packages = packages or default_api_packages()
    mal_tp = {"com/google/gson": 0.5, "com/umeng": 0.4, "com/baidu": 0.2, "org/apache/http": 0.3,
              "org/keyczar": 0.08, "org/bouncycastle": 0.05}
    ben_tp = {"com/google/android/gms": 0.7, "com/google/gson": 0.5, "okhttp3": 0.5, "com/facebook/ads": 0.3,
              "com/bumptech/glide": 0.3, "net/sqlcipher": 0.08, "org/spongycastle": 0.04}
    mal12 = GenProfile(
        "malicious-2012", "malicious", 2012,
        intensities=_scaled({"MD5": 4.0, "SHA-1": 0.55, "SHA-256": 0.08, "DES": 2.0, "AES": 0.35, "DESede": 0.05,
                     "RSA": 0.12, "SHA1withRSA": 0.3, "HmacSHA1": 0.2, "HmacMD5": 0.05, "SHA1PRNG": 0.25,
                     "NativePRNG": 0.1, "ECDH": 0.01, "BKS": 0.03, "PBEWithMD5AndDES": 0.05}),
        obfuscation=dict(_OBF_MALICIOUS), crypto_free_prob=0.03, default_mode_prob=0.75,
        third_party=mal_tp, native_libs={}, extra_imports=1.6,
        api_intensities=_api_rates("malicious", packages), user_classes=4.0)
    mal16 = GenProfile(
        "malicious-2016", "malicious", 2016,
        intensities=_scaled({"MD5": 3.6, "SHA-1": 0.4, "SHA-256": 0.25, "AES": 0.9, "DES": 0.8, "DESede": 0.05,
                     "RSA": 0.3, "SHA1withRSA": 0.2, "SHA256withRSA": 0.06, "HmacSHA1": 0.2,
                     "HmacSHA256": 0.08, "SHA1PRNG": 0.2, "NativePRNG": 0.15, "ECDH": 0.02,
                     "AndroidKeyStore": 0.03}),
        obfuscation=dict(_OBF_MALICIOUS), crypto_free_prob=0.03, default_mode_prob=0.65,
        third_party=mal_tp, native_libs={}, extra_imports=1.4,
        api_intensities=_api_rates("malicious", packages), user_classes=4.0)
    ben12 = GenProfile(
        "benign-2012", "benign", 2012,
        intensities=_scaled({"MD5": 0.3, "SHA-1": 0.35, "SHA-256": 0.35, "AES": 0.5, "DES": 0.16, "DESede": 0.04,
                     "Blowfish": 0.02, "RSA": 0.06, "SHA1withRSA": 0.05, "HmacSHA1": 0.15,
                     "SHA1PRNG": 0.12, "NativePRNG": 0.2, "PBKDF2WithHmacSHA1": 0.05}),
        obfuscation=dict(_OBF_BENIGN), crypto_free_prob=0.05, default_mode_prob=0.35,
        third_party=ben_tp, native_libs={"openssl": 0.02}, extra_imports=0.5,
        api_intensities=_api_rates("benign", packages), user_classes=3.0)
    ben16 = GenProfile(
        "benign-2016", "benign", 2016,
        intensities=_scaled({"MD5": 0.3, "SHA-1": 0.3, "SHA-256": 0.6, "SHA-512": 0.05, "AES": 0.75, "DES": 0.15,
                     "DESede": 0.03, "RC4": 0.01, "RSA": 0.1, "SHA256withRSA": 0.06, "SHA256withECDSA": 0.02,
                     "HmacSHA256": 0.2, "HmacSHA1": 0.1, "SHA1PRNG": 0.08, "NativePRNG": 0.25,
                     "AndroidKeyStore": 0.06, "PBKDF2WithHmacSHA1": 0.06, "DH": 0.01}),
        obfuscation=dict(_OBF_BENIGN), crypto_free_prob=0.05, default_mode_prob=0.3,
        third_party=ben_tp, native_libs={"openssl": 0.02, "libsodium": 0.01}, extra_imports=0.5,
        api_intensities=_api_rates("benign", packages), user_classes=3.0)
    return [mal12, mal16, ben12, ben16]


def crypto_free_profile(label: str = "benign", year: int = 2016) -> GenProfile:
    base = {p.name: p for p in default_profiles()}[f"{label}-{year}"]
    d = asdict(base)
    d.update(name=f"cryptofree-{label}-{year}", crypto_free_prob=1.0, native_libs={},
             third_party={k: v for k, v in base.third_party.items()}, extra_imports=0.0)
    return GenProfile(**d)


def load_profiles(path: Union[str, Path]) -> list[GenProfile]:
    if str(path) == "default":
        return default_profiles()
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("schema_version") != PROFILE_SCHEMA:
        raise ValidationError("profile file needs schema_version 1")
    profiles = []
    for d in doc["profiles"]:
        try:
            p = GenProfile(**d)
        except TypeError as exc:
            raise ValidationError(f"bad profile: {exc}") from None
        p.validate()
        profiles.append(p)
    return profiles


def dump_profiles(profiles: Sequence[GenProfile]) -> str:
    return json.dumps({"schema_version": PROFILE_SCHEMA, "profiles": [asdict(p) for p in profiles]},
                      indent=1, sort_keys=True) + "\n"


# --- source synthesis --------------------------------------------------------

class _Writer:
    """Accumulates one user class: imports plus statements spread over methods."""

    def __init__(self, package: str, name: str):
        self.package = package
        self.name = name
        self.imports: set[str] = set()
        self.statements: list[str] = []
        self.fields: list[str] = []

    def render(self) -> str:
        lines = [f"package {self.package.replace('/', '.')};", ""]
        lines += [f"import {imp};" for imp in sorted(self.imports)]
        lines += ["", f"public class {self.name} {{"]
        lines += [f"    {f}" for f in self.fields]
        stmts = list(self.statements)
        n_methods = max(1, int(math.ceil(len(stmts) / 4)))
        chunks = np.array_split(np.arange(len(stmts)), n_methods) if stmts else [np.arange(0)]
        for k, idx in enumerate(chunks):
            lines.append("")
            lines.append(f"    public void m{k}(Object ctx) throws Exception {{")
            for i in idx:
                for s in stmts[int(i)].split("\n"):
                    lines.append(f"        {s}")
            lines.append("    }")
        lines.append("}")
        return "\n".join(lines) + "\n"


def _ident(rng: np.random.Generator, prefix: str = "v") -> str:
    return f"{prefix}{int(rng.integers(0, 10_000))}"


def _literal_for(primitive: str, form, rng, profile: GenProfile) -> str:
    spellings = form[1]
    if form[0] == "Cipher" and spellings is None:
        if primitive in STREAM_CIPHERS or rng.random() < profile.default_mode_prob:
            return primitive
        suffixes, weights = zip(*CIPHER_SUFFIXES)
        w = np.array(weights) / sum(weights)
        return f"{primitive}/{suffixes[int(rng.choice(len(suffixes), p=w))]}"
    return spellings[int(rng.integers(len(spellings)))]


def _call_statement(cls: str, arg: str, rng, var: str) -> str:
    style = rng.random()
    if style < 0.1:
        return f"{cls} {var} = {cls}.getInstance(\n        {arg});"
    if style < 0.2:
        return f"{cls} {var} = {_QUALIFIED[cls]}.getInstance({arg});"
    return f"{cls} {var} = {cls}.getInstance({arg});"


def _obfuscated_arg(rng) -> str:
    r = rng.random()
    if r < 0.4:
        return _ident(rng, "a")
    if r < 0.7:
        return f"C{int(rng.integers(100))}.d({int(rng.integers(50))})"
    if r < 0.85:
        return '"A" + "ES"'
    return f"getString(R.string.k{int(rng.integers(20))})"


_QUALIFIED = {"Cipher": "javax.crypto.Cipher", "Mac": "javax.crypto.Mac",
              "KeyAgreement": "javax.crypto.KeyAgreement", "SecretKeyFactory": "javax.crypto.SecretKeyFactory",
              "MessageDigest": "java.security.MessageDigest", "Signature": "java.security.Signature",
              "SecureRandom": "java.security.SecureRandom", "KeyStore": "java.security.KeyStore"}

_DECOYS = (
    '// {cls}.getInstance("{lit}") was replaced',
    '/* legacy:\n   {cls} x = {cls}.getInstance("{lit}");\n*/',
    'String hint{n} = "{cls}.getInstance(\\"{lit}\\")";',
    'String doc{n} = "uses {lit} via {cls}"; // {cls}.getInstance("{lit}")',
    'Object my{n} = My{cls}.getInstance("{lit}");',
)


def _decoy(rng) -> str:
    cls, lit = [("MessageDigest", "MD5"), ("Cipher", "DES"), ("Mac", "HmacSHA1"),
                ("Signature", "SHA1withRSA"), ("Cipher", "AES/CBC/PKCS5Padding")][int(rng.integers(5))]
    tpl = _DECOYS[int(rng.integers(len(_DECOYS)))]
    return tpl.format(cls=cls, lit=lit, n=int(rng.integers(1000)))


def _third_party_class(prefix: str, k: int, rng) -> str:
    pkg = prefix.replace("/", ".")
    body = [
        f"package {pkg};", "", "import java.security.MessageDigest;", "import javax.crypto.Cipher;", "",
        f"public class T{k} {{",
        "    public byte[] h(byte[] b) throws Exception {",
        '        MessageDigest md = MessageDigest.getInstance("MD5");',
        '        Cipher c = Cipher.getInstance("AES/ECB/PKCS5Padding");',
        "        return md.digest(b);",
        "    }",
    ]
    for j in range(int(rng.integers(1, 4))):
        body += [f"    public int f{j}(int x) {{", f"        return x + {j};", "    }"]
    body.append("}")
    return "\n".join(body) + "\n"


def generate_sample(profile: GenProfile, index: int, seed: int, profile_index: int,
                    out_root: Path, catalog: PatternCatalog, packages: Sequence[ApiPackage]) -> ManifestEntry:
    rng = np.random.default_rng(np.random.SeedSequence([seed, profile_index, index]))
    sid = f"{profile.name}-{index:05d}"
    root = out_root / "samples" / sid
    vendor, app = _WORDS[int(rng.integers(len(_WORDS)))], _WORDS[int(rng.integers(len(_WORDS)))]
    user_pkg = f"com/{vendor}{int(rng.integers(100))}/{app}"
    n_classes = 1 + int(rng.poisson(profile.user_classes))
    writers = [_Writer(user_pkg if k % 3 else f"{user_pkg}/sub", f"{app.capitalize()}C{k}")
               for k in range(n_classes)]

    crypto_free = rng.random() < profile.crypto_free_prob
    if not crypto_free:
        for prim in sorted(profile.intensities):
            count = int(rng.poisson(profile.intensities[prim]))
            form = PRIMITIVE_FORMS[prim]
            p_obf = profile.obfuscation_prob(prim, catalog)
            for _ in range(count):
                w = writers[int(rng.integers(n_classes))]
                var = _ident(rng)
                if form[0] == "new":
                    w.imports.add("java.security.SecureRandom")
                    w.statements.append(f"SecureRandom {var} = new SecureRandom();")
                    continue
                cls = form[0]
                if rng.random() < 0.15:
                    w.imports.add(_QUALIFIED[cls].rsplit(".", 1)[0] + ".*")
                else:
                    w.imports.add(_QUALIFIED[cls])
                if rng.random() < p_obf:
                    arg = _obfuscated_arg(rng)
                else:
                    arg = f'"{_literal_for(prim, form, rng, profile)}"'
                w.statements.append(_call_statement(cls, arg, rng, var))
        for _ in range(int(rng.poisson(profile.extra_imports))):
            writers[int(rng.integers(n_classes))].imports.add(_EXTRA_IMPORTS[int(rng.integers(len(_EXTRA_IMPORTS)))])
    for lib in sorted(profile.native_libs):
        if rng.random() < profile.native_libs[lib]:
            loader = ("System", "ReLinker", "Native")[int(rng.integers(3))]
            arg = f'"{lib}"' if loader == "System" else f'ctx, "{lib}"'
            writers[0].statements.append(f"{loader}.loadLibrary({arg});")
    # native-name decoys outside load calls
    if rng.random() < 0.2:
        writers[-1].statements.append('String lib = "openssl"; // System.loadLibrary("wolfssl")')

    for pkg in packages:
        lam = profile.api_intensities.get(pkg.package, 0.0)
        for _ in range(int(rng.poisson(lam))):
            w = writers[int(rng.integers(n_classes))]
            simple = pkg.classes[int(rng.integers(len(pkg.classes)))] if pkg.classes else None
            if simple is None:
                continue
            qualified = pkg.package if pkg.package.endswith("." + simple) else f"{pkg.package}.{simple}"
            w.imports.add(qualified)
            w.statements.append(f"{simple}.{('get', 'from', 'of', 'init')[int(rng.integers(4))]}X(ctx);")

    for w in writers:
        if rng.random() < profile.decoy_prob:
            w.statements.insert(int(rng.integers(len(w.statements) + 1)), _decoy(rng))
        # shuffle statements so crypto calls land in varied methods
        order = rng.permutation(len(w.statements))
        w.statements = [w.statements[i] for i in order]

    files: dict[str, str] = {}
    for w in writers:
        files[f"{w.package}/{w.name}.java"] = w.render()
    for prefix in sorted(profile.third_party):
        if rng.random() < profile.third_party[prefix]:
            for k in range(int(rng.integers(1, 4))):
                files[f"{prefix}/T{k}.java"] = _third_party_class(prefix, k, rng)

    for rel, text in sorted(files.items()):
        p = root / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(text, encoding="utf-8")

    vt = int(rng.integers(5, 40)) if profile.label == "malicious" else int(rng.integers(0, 2))
    return ManifestEntry(sid, profile.label, profile.year, f"samples/{sid}", vt,
                         _MARKETS[int(rng.integers(len(_MARKETS)))])


@dataclass
class GeneratedCorpus:
    root: Path
    manifest: list
    seed: int

    @property
    def manifest_path(self) -> Path:
        return self.root / "manifest.jsonl"


def _gen_one(args) -> ManifestEntry:
    return generate_sample(*args)


def generate_corpus(profiles: Sequence[GenProfile], n_per_profile: int, seed: int,
                    out: Union[str, Path], workers: int = 1,
                    catalog: Optional[PatternCatalog] = None,
                    packages: Optional[Sequence[ApiPackage]] = None) -> GeneratedCorpus:
    """Write ``n_per_profile`` samples per profile under ``out`` plus ``manifest.jsonl``."""
    if n_per_profile <= 0:
        raise ValidationError("n_per_profile must be positive")
    for p in profiles:
        p.validate()
    catalog = catalog or default_catalog()
    packages = tuple(packages if packages is not None else default_api_packages())
    root = Path(out)
    root.mkdir(parents=True, exist_ok=True)
    jobs = [(p, i, seed, k, root, catalog, packages)
            for k, p in enumerate(profiles) for i in range(n_per_profile)]
    manifest = ordered_map(_gen_one, jobs, workers=workers, processes=True)
    with open(root / "manifest.jsonl", "w", encoding="utf-8") as fh:
        for e in manifest:
            fh.write(json.dumps(e.to_dict(), sort_keys=True) + "\n")
    return GeneratedCorpus(root, manifest, seed)
