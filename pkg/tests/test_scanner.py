import json
from collections import Counter

import pytest

from cryptoscope.catalog import Category, Mode, Padding, default_catalog
from cryptoscope.errors import MissingSample, ParseError, ValidationError
from cryptoscope.libfilter import ClassOrigin, default_signatures
from cryptoscope.scanner import (CallSite, ManifestEntry, SourceClass, count_api_calls, default_api_packages,
                                 read_manifest, scan_class, scan_corpus, scan_sample, scan_text)


def _scan(src):
    sites, _ = scan_text(src, "a/A.java", default_catalog())
    return sites


def test_basic_static_constructor():
    (s,) = _scan('x = MessageDigest.getInstance("MD5");')
    assert (s.api_class, s.primitive, s.category, s.line) == ("MessageDigest", "MD5", Category.HASH, 1)
    assert not s.obfuscated


def test_commented_and_string_decoys_ignored():
    src = ('// MessageDigest.getInstance("MD5");\n'
           '/* Cipher.getInstance("DES"); */\n'
           'String s = "Mac.getInstance(\\"HmacSHA1\\")";\n')
    assert _scan(src) == []


def test_lookalike_class_names_ignored():
    assert _scan('MyCipher.getInstance("AES"); CipherSuite.getInstance("AES"); myMac.getInstance("X");') == []


def test_two_constructors_on_one_line_count_twice():
    sites = _scan('a = MessageDigest.getInstance("MD5"); b = MessageDigest.getInstance("SHA-256");')
    assert [s.primitive for s in sites] == ["MD5", "SHA-256"]
    assert sites[0].column < sites[1].column


def test_argument_on_following_line():
    (s,) = _scan('c = Cipher.getInstance(\n      "AES/CBC/PKCS5Padding");')
    assert (s.primitive, s.mode, s.padding, s.line) == ("AES", Mode.CBC, Padding.PKCS5, 1)


@pytest.mark.parametrize("arg", ["alg", '"Hmac" + "SHA1"', "ALGS[0]", "getAlg()"])
def test_non_literal_argument_is_obfuscated(arg):
    (s,) = _scan(f"m = Mac.getInstance({arg});")
    assert s.obfuscated and s.primitive == "Unknown" and s.category is Category.MAC


def test_obfuscated_cipher_lands_in_unresolved():
    (s,) = _scan("c = Cipher.getInstance(name);")
    assert s.category is Category.UNRESOLVED


@pytest.mark.parametrize("raw", ["AES", "DES"])
def test_default_mode_reported(raw):
    (s,) = _scan(f'c = Cipher.getInstance("{raw}");')
    assert (s.mode, s.padding) == (Mode.ECB, Padding.PKCS7)


def test_fully_qualified_and_provider_argument():
    sites = _scan('a = javax.crypto.Cipher.getInstance("RC4");\n'
                  'b = java.security.Signature.getInstance("SHA256withRSA", "BC");')
    assert [(s.primitive, s.category) for s in sites] == [("RC4", Category.SYMMETRIC),
                                                          ("SHA256withRSA", Category.SIGNATURE)]


def test_direct_secure_random_construction():
    (s,) = _scan("SecureRandom r = new SecureRandom();")
    assert (s.primitive, s.category, s.raw_arg) == ("NativePRNG", Category.PRNG, "")


def test_unknown_literal_primitive():
    (s,) = _scan('d = MessageDigest.getInstance("WHIRLPOOL");')
    assert s.primitive == "Unknown" and not s.obfuscated and s.category is Category.HASH


def test_imports_recorded():
    _, imps = scan_text("import javax.crypto.Cipher;\nimport java.security.*;\nimport java.util.List;\n",
                        "a/A.java", default_catalog())
    assert [i.key for i in imps] == ["javax.crypto.Cipher", "java.security.*"]


def test_callsite_roundtrip():
    (s,) = _scan('c = Cipher.getInstance("AES/GCM/NoPadding");')
    assert CallSite.from_dict(json.loads(json.dumps(s.to_dict()))) == s


def test_scan_class_rejects_non_user():
    with pytest.raises(ValueError):
        scan_class(SourceClass("x/A.java", "x", ClassOrigin.THIRD_PARTY, ""), default_catalog())


def test_api_call_counting():
    pk = [p for p in default_api_packages() if p.package == "android.telephony"]
    src = ("import android.telephony.SmsManager;\n"
           "class A { void f() { SmsManager.getDefault().sendTextMessage(a); new SmsManager(); "
           "// SmsManager.getDefault();\n } }")
    assert count_api_calls(src, pk) == Counter({"android.telephony": 2})


def test_manifest_parsing(tmp_path):
    m = tmp_path / "m.jsonl"
    m.write_text('{"id": "a", "label": "benign", "year": 2012, "path": "a", "vt_flags": 7}\n\n')
    (e,) = read_manifest(m)
    assert e.label == "benign"
    (e,) = read_manifest(m, strict=True)
    assert e.label == "malicious"
    m.write_text('{"id": "a", "label": "evil", "year": 2012, "path": "a"}\n')
    with pytest.raises(ValidationError, match=":1:"):
        read_manifest(m)
    m.write_text("{oops\n")
    with pytest.raises(ParseError):
        read_manifest(m)


def test_missing_sample(tmp_path):
    with pytest.raises(MissingSample):
        scan_sample(ManifestEntry("x", "benign", 2012, "nope"), default_catalog(), base_dir=tmp_path)


def _ground_truth(adversarial_dir):
    gt = json.loads((adversarial_dir / "ground_truth.json").read_text())
    expected = Counter((c["sample"], c["file"], c["line"], c["api_class"], c["primitive"], c["category"],
                        c["obfuscated"], c["mode"], c["padding"]) for c in gt["call_sites"])
    return gt, expected


def test_adversarial_fixture_matches_ground_truth(adversarial_dir):
    gt, expected = _ground_truth(adversarial_dir)
    entries = read_manifest(adversarial_dir / "manifest.jsonl")
    scans = scan_corpus(entries, default_catalog(), default_signatures(), adversarial_dir)
    got = Counter()
    for sc in scans:
        for s in sc.call_sites:
            got[(sc.sample.id, s.file, s.line, s.api_class, s.primitive, s.category.value, s.obfuscated,
                 s.mode.value if s.mode else None, s.padding.value if s.padding else None)] += 1
        assert sorted(sc.libs.java_libs) == sorted(gt["java_libs"].get(sc.sample.id, []))
        assert sorted(sc.libs.native_libs) == sorted(gt["native_libs"].get(sc.sample.id, []))
    assert got == expected
    assert sum(expected.values()) == 30
    assert {c for (_, _, _, _, _, c, *_) in expected} >= {c.value for c in Category
                                                          if c not in (Category.UNRESOLVED,)}


def test_scan_order_independent_of_workers(adversarial_dir):
    entries = read_manifest(adversarial_dir / "manifest.jsonl")
    a = scan_corpus(entries, default_catalog(), default_signatures(), adversarial_dir, workers=1)
    b = scan_corpus(entries, default_catalog(), default_signatures(), adversarial_dir, workers=3)
    assert [x.call_sites for x in a] == [x.call_sites for x in b]
