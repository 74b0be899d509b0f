"""Small CSV reading helpers shared by the log/ratings/events parsers."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Callable, Iterator, TypeVar, Union

from .errors import FormatError

T = TypeVar("T")
Source = Union[str, Path, IO[str], IO[bytes]]

MAX_BAD_ROW_FRACTION = 0.10


@dataclass(frozen=True)
class RowError:
    line: int
    message: str

    def __str__(self) -> str:
        return f"line {self.line}: {self.message}"


def _open_text(source: Source) -> tuple[IO[str], bool]:
    if isinstance(source, (str, Path)):
        return open(source, newline="", encoding="utf-8"), True
    if isinstance(source, io.TextIOBase):
        return source, False
    # binary stream
    return io.TextIOWrapper(source, encoding="utf-8", newline=""), False  # type: ignore[arg-type]


def read_records(
    source: Source,
    header: tuple[str, ...],
    convert: Callable[[list[str]], T],
) -> tuple[list[T], list[RowError]]:
    """Parse a headed CSV, converting each row with ``convert``.

    Rows for which ``convert`` raises ``ValueError`` are collected as
    :class:`RowError` instead of aborting, unless more than 10% of the data
    rows fail, in which case a :class:`FormatError` is raised.
    """
    fh, owned = _open_text(source)
    try:
        reader = csv.reader(fh)
        try:
            first = next(reader)
        except StopIteration:
            raise FormatError(f"missing header, expected {','.join(header)}") from None
        if tuple(c.strip() for c in first) != header:
            raise FormatError(
                f"bad header {','.join(first)!r}, expected {','.join(header)!r}"
            )
        records: list[T] = []
        errors: list[RowError] = []
        n_rows = 0
        for row in reader:
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            n_rows += 1
            line = reader.line_num
            if len(row) != len(header):
                errors.append(RowError(line, f"expected {len(header)} fields, got {len(row)}"))
                continue
            try:
                records.append(convert(row))
            except ValueError as exc:
                errors.append(RowError(line, str(exc)))
    finally:
        if owned:
            fh.close()
    if n_rows and len(errors) > MAX_BAD_ROW_FRACTION * n_rows:
        raise FormatError(
            f"{len(errors)} of {n_rows} rows malformed; first: {errors[0]}"
        )
    return records, errors


def iter_ids(field: str) -> Iterator[int]:
    for part in field.split(";"):
        part = part.strip()
        if part:
            yield int(part)
