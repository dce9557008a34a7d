"""Vocabularies, anchors and peak windows.

Everything that depends on survey coding lives here so that the rest of the
pipeline never hard-codes purpose or mode strings. A config file is a small
TOML document::

    [purposes]
    codes = ["home", "work", "school", ...]
    anchors = ["home", "work"]

    [purposes.aliases]
    "go home" = "home"

    [modes]
    codes = ["drive", "passenger", ...]

    [peak]
    windows = ["07:00-09:00", "16:00-18:00"]
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

DEFAULT_PURPOSES = (
    "home", "work", "school", "shopping", "errand",
    "leisure", "escort", "gym", "other",
)
DEFAULT_MODES = (
    "drive", "passenger", "transit", "walk", "bike", "school-bus", "other",
)
DEFAULT_ANCHORS = ("home", "work")
DEFAULT_PEAK_WINDOWS = ((7 * 60, 9 * 60), (16 * 60, 18 * 60))


def _norm(code):
    return " ".join(str(code).strip().lower().split())


@dataclass(frozen=True)
class Vocabulary:
    """Ordered canonical codes plus a raw-string alias table."""

    codes: tuple
    aliases: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(set(self.codes)) != len(self.codes):
            raise ValueError("duplicate codes in vocabulary")
        for raw, canon in self.aliases.items():
            if canon not in self.codes:
                raise ValueError(f"alias {raw!r} maps to unknown code {canon!r}")

    def canonical(self, raw):
        """Return the canonical code for ``raw`` or None if unknown/blank."""
        if raw is None:
            return None
        key = _norm(raw)
        if not key:
            return None
        if key in self.codes:
            return key
        for alias, canon in self.aliases.items():
            if _norm(alias) == key:
                return canon
        return None

    def index(self, code):
        return self.codes.index(code)

    def __contains__(self, code):
        return code in self.codes

    def __len__(self):
        return len(self.codes)


@dataclass(frozen=True)
class PipelineConfig:
    purposes: Vocabulary = field(default_factory=lambda: Vocabulary(DEFAULT_PURPOSES))
    modes: Vocabulary = field(default_factory=lambda: Vocabulary(DEFAULT_MODES))
    anchors: tuple = DEFAULT_ANCHORS
    peak_windows: tuple = DEFAULT_PEAK_WINDOWS
    train: dict = field(default_factory=dict)

    def __post_init__(self):
        for a in self.anchors:
            if a not in self.purposes:
                raise ValueError(f"anchor {a!r} is not a configured purpose")
        for lo, hi in self.peak_windows:
            if not 0 <= lo < hi <= 24 * 60:
                raise ValueError(f"bad peak window {(lo, hi)}")

    @property
    def home(self):
        return self.anchors[0]

    def digest(self):
        blob = json.dumps(
            {
                "purposes": list(self.purposes.codes),
                "purpose_aliases": sorted(self.purposes.aliases.items()),
                "modes": list(self.modes.codes),
                "mode_aliases": sorted(self.modes.aliases.items()),
                "anchors": list(self.anchors),
                "peak": [list(w) for w in self.peak_windows],
                "train": sorted((k, repr(v)) for k, v in self.train.items()),
            },
            sort_keys=True,
        )
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def parse_hhmm(text):
    """'07:30' or '730' -> minutes since midnight."""
    s = str(text).strip()
    if ":" in s:
        hh, mm = s.split(":", 1)
    else:
        if not s.isdigit():
            raise ValueError(f"bad time {text!r}")
        hh, mm = s[:-2] or "0", s[-2:]
    h, m = int(hh), int(mm)
    if not (0 <= h <= 24 and 0 <= m < 60) or h * 60 + m > 24 * 60:
        raise ValueError(f"bad time {text!r}")
    return h * 60 + m


def load_config(path=None):
    """Read a TOML config; ``None`` gives the shipped defaults."""
    if path is None:
        return PipelineConfig()
    with open(Path(path), "rb") as fh:
        doc = tomllib.load(fh)

    p = doc.get("purposes", {})
    m = doc.get("modes", {})
    purposes = Vocabulary(
        tuple(_norm(c) for c in p.get("codes", DEFAULT_PURPOSES)),
        {k: _norm(v) for k, v in p.get("aliases", {}).items()},
    )
    modes = Vocabulary(
        tuple(_norm(c) for c in m.get("codes", DEFAULT_MODES)),
        {k: _norm(v) for k, v in m.get("aliases", {}).items()},
    )
    anchors = tuple(_norm(a) for a in p.get("anchors", DEFAULT_ANCHORS))
    windows = DEFAULT_PEAK_WINDOWS
    if "peak" in doc:
        windows = []
        for w in doc["peak"].get("windows", []):
            lo, hi = w.split("-")
            windows.append((parse_hhmm(lo), parse_hhmm(hi)))
        windows = tuple(windows)
    return PipelineConfig(purposes, modes, anchors, windows, dict(doc.get("train", {})))
