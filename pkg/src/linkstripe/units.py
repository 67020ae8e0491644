"""Parsing and formatting for sizes, rates and durations.

Conventions follow the benchmark tools this package models itself on:
sizes use binary prefixes (``256M`` is 256 MiB), while bandwidths use
decimal prefixes (``GB/s`` is 1e9 bytes per second).
"""

from __future__ import annotations

import re

# Size suffixes are binary: nccl-tests style "-b 256M" means 256 MiB.
_SIZE_UNITS = {
    "": 1,
    "B": 1,
    "K": 1 << 10,
    "KB": 1 << 10,
    "KIB": 1 << 10,
    "M": 1 << 20,
    "MB": 1 << 20,
    "MIB": 1 << 20,
    "G": 1 << 30,
    "GB": 1 << 30,
    "GIB": 1 << 30,
}

# Rate suffixes are decimal, upper/lower case distinguishes bytes from bits.
_RATE_UNITS = {
    "B/S": 1.0,
    "KB/S": 1e3,
    "MB/S": 1e6,
    "GB/S": 1e9,
    "TB/S": 1e12,
    "KB/S_BITS": 1e3 / 8,
    "MB/S_BITS": 1e6 / 8,
    "GB/S_BITS": 1e9 / 8,
    "TB/S_BITS": 1e12 / 8,
}

_TIME_UNITS = {
    "S": 1.0,
    "MS": 1e-3,
    "US": 1e-6,
    "µS": 1e-6,
    "NS": 1e-9,
}

_NUM_RE = re.compile(r"^\s*([0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)\s*([^\s]*)\s*$")


def _split(text: str) -> tuple[float, str]:
    m = _NUM_RE.match(str(text))
    if not m:
        raise ValueError(f"cannot parse quantity: {text!r}")
    return float(m.group(1)), m.group(2)


def parse_size(text: str | int | float) -> int:
    """Parse a byte count such as ``"256M"``, ``"4MiB"`` or a bare number."""
    if isinstance(text, (int, float)):
        return int(text)
    value, unit = _split(text)
    key = unit.upper()
    if key not in _SIZE_UNITS:
        raise ValueError(f"unknown size unit {unit!r} in {text!r}")
    return int(round(value * _SIZE_UNITS[key]))


def parse_bandwidth(text: str | int | float) -> float:
    """Parse a rate such as ``"200 GB/s"`` or ``"800 Gb/s"`` into bytes/second.

    A lowercase ``b`` (bits) divides by 8; bare numbers are bytes/second.
    """
    if isinstance(text, (int, float)):
        return float(text)
    value, unit = _split(text)
    if not unit:
        return value
    bits = "b/" in unit and "B/" not in unit
    key = unit.upper()
    if bits:
        key += "_BITS"
    if key not in _RATE_UNITS:
        raise ValueError(f"unknown bandwidth unit {unit!r} in {text!r}")
    return value * _RATE_UNITS[key]


def parse_time(text: str | int | float) -> float:
    """Parse a duration such as ``"5us"`` or ``"1.5 ms"`` into seconds."""
    if isinstance(text, (int, float)):
        return float(text)
    value, unit = _split(text)
    if not unit:
        return value
    # micro sign and Greek mu both read as "u"
    key = unit.replace("µ", "u").replace("μ", "u").upper()
    if key not in _TIME_UNITS:
        raise ValueError(f"unknown time unit {unit!r} in {text!r}")
    return value * _TIME_UNITS[key]


def gbps(bytes_per_second: float) -> float:
    """Bytes/second expressed in GB/s (1e9), the usual reporting unit."""
    return bytes_per_second / 1e9


def format_size(n_bytes: int) -> str:
    for unit, mult in (("G", 1 << 30), ("M", 1 << 20), ("K", 1 << 10)):
        if n_bytes >= mult and n_bytes % mult == 0:
            return f"{n_bytes // mult}{unit}"
    return str(n_bytes)
