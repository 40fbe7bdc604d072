"""Locale-independent delimited output helpers (17 significant digits)."""

from __future__ import annotations

from pathlib import Path


def format_float(x: float) -> str:
    return format(float(x), ".17g")


def write_csv(path, header: list[str], rows) -> None:
    """Write rows of floats/strings under a comma-separated header."""
    lines = [",".join(header)]
    for row in rows:
        lines.append(
            ",".join(v if isinstance(v, str) else format_float(v) for v in row)
        )
    Path(path).write_text("\n".join(lines) + "\n")
