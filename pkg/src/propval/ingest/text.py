"""Keyword and regex rules that recover listing fields from free text.

All matching is case-insensitive. The rule tables below are the contract;
the bundled labelled corpus (``data/labelled_descriptions.csv``) pins them.

Counting rules for rooms
------------------------
beds
    Any ``<number> [qualifier] bed|beds|bedroom|bedrooms|bedrm`` match gives
    the count (largest match wins). Without a numbered match, each mention of
    ``bedroom`` is counted once.
baths
    Numbered ``<number> [qualifier] bath|baths|bathroom|bathrooms`` matches
    give a base count (largest wins); every separate ``wc`` / ``guest toilet``
    mention adds one, since those are rarely folded into the headline
    bathroom figure. Without a numbered match, mentions of ``bathroom``,
    ``shower room``, ``ensuite`` and ``wc`` are each counted once.
"""
from __future__ import annotations

import re

from ..records import BER_LEVELS, FEATURES

WORD_NUMBERS = {
    "one": 1, "two": 2, "three": 3, "four": 4, "five": 5,
    "six": 6, "seven": 7, "eight": 8, "nine": 9, "ten": 10,
}
_NUM = r"\b(\d{1,2}|" + "|".join(WORD_NUMBERS) + r")"
_QUAL = r"(?:[\s-]+(?:double|single|twin|large|spacious|generous|good[\s-]sized|well[\s-]proportioned))?"

MAX_ROOMS = 20
SIZE_RANGE = (10.0, 2000.0)

# ---------------------------------------------------------------------------
# property type
# ---------------------------------------------------------------------------

# phrases that contain a type keyword without describing the dwelling
TYPE_DECOYS = (
    r"roof[\s-]+terrace", r"sun[\s-]+terrace", r"patio[\s-]+terrace",
    r"decked[\s-]+terrace", r"terrace[\s-]+garden", r"balcony[\s-]+terrace",
    r"flat[\s-]+roof\w*", r"flat[\s-]+site", r"flat[\s-]+garden",
    r"flat[\s-]+screen", r"flat[\s-]+pack", r"flat[\s-]+fee",
    r"detached[\s-]+garage", r"detached[\s-]+(?:shed|workshop|studio|office|outbuilding)",
    r"studio[\s-]+(?:room|space|shed)", r"garden[\s-]+studio",
    r"apartment[\s-]+(?:block|complex)",
)

# (category, patterns) in precedence order: first category with a hit wins
TYPE_RULES = (
    ("end-of-terrace", (r"end[\s-]*of[\s-]*terra(?:c|nc)e", r"end[\s-]+terra(?:c|nc)e")),
    ("semi-detached", (r"semi[\s-]*deta(?:t)?ched", r"semi[\s-]d\b")),
    ("terraced", (r"\bterra(?:c|nc)ed?\b", r"mid[\s-]+terra(?:c|nc)e")),
    ("townhouse", (r"\btown[\s-]?house",)),
    ("detached", (r"\bdeta(?:t)?ched\b", r"\bbungalow\b")),
    ("duplex", (r"\bduplex\b",)),
    ("apartment", (r"\bstudio\b", r"\bapartments?\b", r"\bpenthouse\b", r"\bflats?\b")),
)

_DECOY_RE = re.compile("|".join(TYPE_DECOYS), re.IGNORECASE)
_TYPE_RES = tuple((cat, re.compile("|".join(p), re.IGNORECASE)) for cat, p in TYPE_RULES)


def extract_property_type(description: str) -> str:
    """Return a property-type token or ``"unknown"``."""
    text = _DECOY_RE.sub(" ", description or "")
    for cat, rx in _TYPE_RES:
        if rx.search(text):
            return cat
    return "unknown"


# ---------------------------------------------------------------------------
# room counts
# ---------------------------------------------------------------------------

_BED_NUM = re.compile(_NUM + _QUAL + r"[\s-]*(?:bed(?:room)?s?|bedrm)\b", re.IGNORECASE)
_BED_WORD = re.compile(r"\bbedrooms?\b", re.IGNORECASE)
_BATH_NUM = re.compile(_NUM + _QUAL + r"[\s-]*(?:bath(?:room)?s?)\b", re.IGNORECASE)
# "w.c." ends in punctuation, so it takes no trailing word boundary
_WC = r"\b(?:guest\s+)?(?:wcs?\b|w\.c\.|toilets?\b)"
_BATH_EXTRA = re.compile(_WC, re.IGNORECASE)
_BATH_WORD = re.compile(
    r"\bbathrooms?\b|\bshower[\s-]+rooms?\b|\ben[\s-]?suites?\b|" + _WC,
    re.IGNORECASE,
)


def _as_int(token: str) -> int:
    token = token.lower()
    return WORD_NUMBERS[token] if token in WORD_NUMBERS else int(token)


def extract_counts(description: str, kind: str):
    """Bedroom or bathroom count mined from text, or ``None``."""
    text = description or ""
    if kind == "beds":
        nums = [_as_int(m.group(1)) for m in _BED_NUM.finditer(text)]
        count = max(nums) if nums else len(_BED_WORD.findall(text))
    elif kind == "baths":
        nums = [_as_int(m.group(1)) for m in _BATH_NUM.finditer(text)]
        if nums:
            count = max(nums) + len(_BATH_EXTRA.findall(text))
        else:
            count = len(_BATH_WORD.findall(text))
    else:
        raise ValueError(f"kind must be 'beds' or 'baths', not {kind!r}")
    if count == 0 or count > MAX_ROOMS:
        return None
    return count


# ---------------------------------------------------------------------------
# floor area
# ---------------------------------------------------------------------------

_NUMBER = r"(\d{1,3}(?:,\d{3})+|\d+(?:\.\d+)?)"
_SIZE_RE = re.compile(
    _NUMBER + r"\s*(?:sq\.?\s*m(?:etres|eters|trs)?\b|sqm\b|m2\b|m²|square\s+met(?:re|er)s?\b)",
    re.IGNORECASE,
)
_ROOM_RE = re.compile(
    r"(\d+(?:\.\d+)?)\s*m?\s*[x×]\s*(\d+(?:\.\d+)?)\s*m\b(?!²|2)", re.IGNORECASE
)


def size_in_gate(v):
    return v if SIZE_RANGE[0] <= v <= SIZE_RANGE[1] else None


def extract_size(description: str):
    """Floor area in m²: a stated total if present, else summed room sizes."""
    text = description or ""
    m = _SIZE_RE.search(text)
    if m:
        return size_in_gate(float(m.group(1).replace(",", "")))
    rooms = _ROOM_RE.findall(text)
    if not rooms:
        return None
    total = sum(float(a) * float(b) for a, b in rooms)
    return size_in_gate(round(total, 6))


# ---------------------------------------------------------------------------
# BER
# ---------------------------------------------------------------------------

_BER_TOKENS = sorted((b for b in BER_LEVELS if b != "unknown"), key=len, reverse=True)
_BER_RE = re.compile(
    r"\bBER\b(?:\s*(?:rating|rated|cert(?:ificate)?|is|of|:|=|-)\s*)*\s*("
    + "|".join(_BER_TOKENS) + r")(?![0-9a-z])",
    re.IGNORECASE,
)


def extract_ber(description: str) -> str:
    m = _BER_RE.search(description or "")
    return m.group(1).upper() if m else "unknown"


# ---------------------------------------------------------------------------
# feature flags
# ---------------------------------------------------------------------------

FEATURE_RULES = {
    "attic_conversion": (
        r"\bat?tt?ic[\s-]+conver(?:s|t)ion", r"\bconverted[\s-]+at?tt?ic", r"\bat?tt?ic[\s-]+(?:room|converted)",
    ),
    "garden": (r"\bgarde?ns?\b",),
    "cul_de_sac": (r"\bcul[\s-]*de[\s-]*sac\b", r"\bculdesac\b"),
    "garage": (r"\bgara(?:g|dg)es?\b", r"\bgaraging\b"),
    "renovated": (
        r"\brenovated\b", r"\brenovted\b", r"\brefurbished\b",
        r"\bmoderni[sz]ed\b",
    ),
    "period": (
        r"\bperiod[\s-]+(?:property|home|house|residence|features?)", r"\bvictorian\b",
        r"\bgeorgian\b", r"\bedwardian\b",
    ),
    "south_facing": (r"\bsouth(?:[\s-]*(?:west|east))?[\s-]*facing\b",),
    "ground_floor_apartment": (
        r"\bground[\s-]+floor[\s-]+(?:apartment|flat|unit|studio)",
    ),
    "second_floor_apartment": (
        r"\b(?:second|2nd)[\s-]+floor[\s-]+(?:apartment|flat|unit|studio)",
    ),
    "penthouse": (r"\bpent[\s-]?house\b",),
    "new_property": (
        r"\bnew[\s-]?build\b", r"\bnewly[\s-]+(?:built|constructed)\b",
        r"\bbrand[\s-]+new[\s-]+(?:home|house|property|apartment|development)",
        r"\bnew[\s-]+development\b",
    ),
}
_FEATURE_RES = {k: re.compile("|".join(v), re.IGNORECASE) for k, v in FEATURE_RULES.items()}
assert tuple(FEATURE_RULES) == FEATURES


def extract_features(description: str) -> tuple[bool, ...]:
    text = description or ""
    return tuple(bool(_FEATURE_RES[name].search(text)) for name in FEATURES)


def is_commercial(description: str, keywords) -> bool:
    text = (description or "").lower()
    return any(re.search(r"\b" + re.escape(k.lower()) + r"\b", text) for k in keywords)
