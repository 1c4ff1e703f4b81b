"""Small shared helpers: stable seeding and number formatting."""

from __future__ import annotations

import hashlib


def stable_seed(*parts) -> int:
    """Derive a deterministic 63-bit sub-seed from arbitrary parts.

    Uses SHA-256 over a delimited string form, so the result is stable
    across processes and platforms (unlike hash()).
    """
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def fmt_number(x: float) -> str:
    """Render a float compactly but losslessly: integral values drop '.0'."""
    f = float(x)
    if f == int(f) and abs(f) < 1e16:
        return str(int(f))
    return repr(f)
