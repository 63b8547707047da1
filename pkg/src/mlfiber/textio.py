"""Plain-text integer matrix format shared by every file the package reads or writes.

The first line holds ``R C``; then R lines of C space-separated base-10
integers follow. A vector is a ``1 x C`` matrix. Files are ASCII with LF
line endings.
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Iterable, Sequence


class MatrixFormatError(ValueError):
    """Raised for malformed matrix text, carrying the 1-based line number."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


def parse_matrix(text: str) -> list[list[int]]:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise MatrixFormatError("missing 'R C' count line", 1)
    head = lines[0].split(" ")
    if len(head) != 2:
        raise MatrixFormatError(f"count line must be 'R C', got {lines[0]!r}", 1)
    try:
        n_rows, n_cols = int(head[0]), int(head[1])
    except ValueError:
        raise MatrixFormatError(f"count line must be 'R C', got {lines[0]!r}", 1) from None
    if n_rows < 0 or n_cols < 0:
        raise MatrixFormatError("negative dimension", 1)
    if len(lines) - 1 != n_rows:
        raise MatrixFormatError(f"expected {n_rows} rows, found {len(lines) - 1}", len(lines))

    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        fields = line.split()
        if len(fields) != n_cols:
            raise MatrixFormatError(f"expected {n_cols} entries, found {len(fields)}", lineno)
        try:
            rows.append([int(f, 10) for f in fields])
        except ValueError:
            raise MatrixFormatError(f"non-integer entry in {line!r}", lineno) from None
    return rows


def format_matrix(rows: Sequence[Sequence[int]], n_cols: int | None = None) -> str:
    rows = [list(r) for r in rows]
    if n_cols is None:
        if not rows:
            raise ValueError("n_cols is required for an empty matrix")
        n_cols = len(rows[0])
    out = [f"{len(rows)} {n_cols}"]
    for r in rows:
        if len(r) != n_cols:
            raise ValueError("ragged matrix")
        out.append(" ".join(str(int(v)) for v in r))
    return "\n".join(out) + "\n"


def read_matrix(path: str | os.PathLike) -> list[list[int]]:
    return parse_matrix(Path(path).read_text(encoding="ascii"))


def read_vector(path: str | os.PathLike) -> list[int]:
    rows = read_matrix(path)
    if len(rows) != 1:
        raise MatrixFormatError(f"a vector file must have exactly 1 row, found {len(rows)}", 1)
    return rows[0]


def write_matrix(path: str | os.PathLike, rows: Iterable[Sequence[int]], n_cols: int | None = None) -> None:
    Path(path).write_bytes(format_matrix(list(rows), n_cols).encode("ascii"))


def write_vector(path: str | os.PathLike, values: Sequence[int]) -> None:
    write_matrix(path, [values], len(values))
