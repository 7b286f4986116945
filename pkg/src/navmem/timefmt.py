"""Parsing and formatting of deployment-relative timecodes."""

from __future__ import annotations

import re

from .errors import UnparseableTime

_TIMECODE = re.compile(r"^(\d+):([0-5]\d):([0-5]\d(?:\.\d+)?)$")

SECONDS_PER_DAY = 86400.0


def parse_timecode(value: str | float | int) -> float:
    """Convert a time query into seconds.

    Accepts numeric seconds directly, or a string in ``HH:MM:SS`` form
    (fractional seconds allowed, hours unbounded so multi-day deployments
    still address every moment).  Minutes and seconds must be below 60.
    """
    if isinstance(value, bool):
        raise UnparseableTime(f"not a time: {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    if not isinstance(value, str):
        raise UnparseableTime(f"not a time: {value!r}")
    text = value.strip()
    m = _TIMECODE.match(text)
    if m:
        hours, minutes, seconds = m.groups()
        return int(hours) * 3600.0 + int(minutes) * 60.0 + float(seconds)
    # Bare numeric strings are convenient on the command line.
    try:
        return float(text)
    except ValueError:
        raise UnparseableTime(f"cannot parse time {value!r}") from None


def format_timecode(seconds: float) -> str:
    """Render seconds as ``T+MM:SS``, growing to ``T+H:MM:SS`` past an hour."""
    total = int(round(seconds))
    if total < 0:
        return "T-" + format_timecode(-seconds)[2:]
    minutes, secs = divmod(total, 60)
    hours, minutes = divmod(minutes, 60)
    if hours:
        return f"T+{hours}:{minutes:02d}:{secs:02d}"
    return f"T+{minutes:02d}:{secs:02d}"


def wall_to_relative(parsed_seconds_of_day: float, wall_epoch: float) -> float:
    """Map a wall-clock time of day onto the deployment timeline.

    ``wall_epoch`` is the unix time at deployment start.  The result is the
    first deployment-relative offset at which the clock shows the given time
    of day (wrapping across midnight).
    """
    epoch_of_day = wall_epoch % SECONDS_PER_DAY
    return (parsed_seconds_of_day - epoch_of_day) % SECONDS_PER_DAY
