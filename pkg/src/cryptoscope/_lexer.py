"""Character-level helpers for Java-like source text.

Both transforms are length preserving, so offsets and line numbers computed
on their output are valid on the original text.
"""

from __future__ import annotations

import re

_LITERAL_RE = re.compile(r'"(?:[^"\\\n]|\\.)*"')


def _blank(chunk: str) -> str:
    return "".join("\n" if ch == "\n" else " " for ch in chunk)


def strip_comments(text: str) -> str:
    """Replace ``//`` and ``/* */`` comments with spaces, keeping newlines.

    String and char literals are copied verbatim, so comment markers inside
    them survive.
    """
    out = []
    i, n = 0, len(text)
    start = 0
    while i < n:
        ch = text[i]
        if ch == '"' or ch == "'":
            j = i + 1
            while j < n and text[j] != ch and text[j] != "\n":
                j += 2 if text[j] == "\\" else 1
            i = min(j + 1, n)
        elif ch == "/" and i + 1 < n and text[i + 1] == "/":
            out.append(text[start:i])
            j = text.find("\n", i)
            j = n if j < 0 else j
            out.append(" " * (j - i))
            i = start = j
        elif ch == "/" and i + 1 < n and text[i + 1] == "*":
            out.append(text[start:i])
            j = text.find("*/", i + 2)
            j = n if j < 0 else j + 2
            out.append(_blank(text[i:j]))
            i = start = j
        else:
            i += 1
    out.append(text[start:])
    return "".join(out)


def mask_literals(text: str) -> str:
    """Blank the contents of string and char literals (quotes are kept).

    Expects comment-free input.  Pattern searches run on the masked text so
    that code-like strings never produce matches.
    """
    out = []
    i, n = 0, len(text)
    start = 0
    while i < n:
        ch = text[i]
        if ch == '"' or ch == "'":
            j = i + 1
            while j < n and text[j] != ch and text[j] != "\n":
                j += 2 if text[j] == "\\" else 1
            j = min(j, n)
            out.append(text[start:i + 1])
            out.append("_" * (j - i - 1))
            i = start = j
            if i < n and text[i] == ch:
                out.append(ch)
                i = start = i + 1
        else:
            i += 1
    out.append(text[start:])
    return "".join(out)


def string_literals(fragment: str) -> list[str]:
    """Contents of the double-quoted literals in ``fragment``, unescaped minimally."""
    return [m.group(0)[1:-1].replace('\\"', '"') for m in _LITERAL_RE.finditer(fragment)]


def matching_paren(masked: str, open_at: int, limit: int) -> int:
    """Index of the ``)`` closing the ``(`` at ``open_at``, or -1 within ``limit``."""
    depth = 0
    for k in range(open_at, min(limit, len(masked))):
        c = masked[k]
        if c == "(":
            depth += 1
        elif c == ")":
            depth -= 1
            if depth == 0:
                return k
    return -1
