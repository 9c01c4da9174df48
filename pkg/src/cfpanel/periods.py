"""Integer period codes.

Yearly periods are the year itself; quarterly periods are ``year * 4 + (q - 1)``
so consecutive quarters differ by one.
"""
import re

_QRE = re.compile(r"^\s*(\d{4})\s*[Qq]([1-4])\s*$")
_YRE = re.compile(r"^\s*(\d{4})(?:\.0+)?\s*$")

FREQUENCIES = ("yearly", "quarterly")


def check_frequency(frequency):
    if frequency not in FREQUENCIES:
        raise ValueError(f"frequency must be one of {FREQUENCIES}, got {frequency!r}")


def parse_period(text, frequency):
    """Parse ``YYYY`` or ``YYYYQn`` into an integer code; None if unparseable."""
    s = str(text)
    if frequency == "quarterly":
        m = _QRE.match(s)
        if not m:
            return None
        return int(m.group(1)) * 4 + int(m.group(2)) - 1
    m = _YRE.match(s)
    return int(m.group(1)) if m else None


def format_period(code, frequency):
    code = int(code)
    if frequency == "quarterly":
        return f"{code // 4}Q{code % 4 + 1}"
    return str(code)


def year_of(code, frequency):
    return int(code) // 4 if frequency == "quarterly" else int(code)


def periods_per_year(frequency):
    return 4 if frequency == "quarterly" else 1


def year_start(year, frequency):
    """Code of the first period of ``year``."""
    return int(year) * 4 if frequency == "quarterly" else int(year)
