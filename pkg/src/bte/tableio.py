"""Tabular output helpers: CSV, a length-prefixed binary form, digests.

The binary layout is: magic ``BTEB1``, u16 column count, then per column a
type code (``s``/``i``/``f``) and a u16-length-prefixed UTF-8 name. Rows
follow as u32-length-prefixed payloads; strings inside a row are u16-length
prefixed, ints are little-endian i64, floats little-endian f64.
"""

from __future__ import annotations

import csv
import hashlib
import struct
from pathlib import Path
from typing import IO, Iterable, Iterator, Sequence

MAGIC = b"BTEB1"

_CODES = {"s": str, "i": int, "f": float}


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> int:
    """Write rows to CSV with a header; returns the number of data rows."""
    n = 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)
            n += 1
    return n


def read_csv_rows(path: str | Path) -> Iterator[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        yield from csv.DictReader(fh)


def write_binary_table(
    path: str | Path,
    columns: Sequence[tuple[str, str]],
    rows: Iterable[Sequence],
) -> int:
    """Write a length-prefixed binary table; ``columns`` is (name, code) pairs."""
    for _, code in columns:
        if code not in _CODES:
            raise ValueError(f"unknown column code {code!r}")
    n = 0
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<H", len(columns)))
        for name, code in columns:
            raw = name.encode("utf-8")
            fh.write(code.encode("ascii"))
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
        for row in rows:
            payload = bytearray()
            for (name, code), value in zip(columns, row, strict=True):
                if code == "s":
                    raw = str(value).encode("utf-8")
                    payload += struct.pack("<H", len(raw)) + raw
                elif code == "i":
                    payload += struct.pack("<q", int(value))
                else:
                    payload += struct.pack("<d", float(value))
            fh.write(struct.pack("<I", len(payload)))
            fh.write(payload)
            n += 1
    return n


def read_binary_table(path: str | Path) -> tuple[list[tuple[str, str]], list[tuple]]:
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise ValueError(f"{path}: not a binary table (bad magic)")
        (ncols,) = struct.unpack("<H", fh.read(2))
        columns = []
        for _ in range(ncols):
            code = fh.read(1).decode("ascii")
            (nlen,) = struct.unpack("<H", fh.read(2))
            name = fh.read(nlen).decode("utf-8")
            columns.append((name, code))
        rows = []
        while True:
            head = fh.read(4)
            if not head:
                break
            (plen,) = struct.unpack("<I", head)
            payload = fh.read(plen)
            if len(payload) != plen:
                raise ValueError(f"{path}: truncated row")
            rows.append(_unpack_row(payload, columns))
    return columns, rows


def _unpack_row(payload: bytes, columns: Sequence[tuple[str, str]]) -> tuple:
    out = []
    off = 0
    for _, code in columns:
        if code == "s":
            (slen,) = struct.unpack_from("<H", payload, off)
            off += 2
            out.append(payload[off : off + slen].decode("utf-8"))
            off += slen
        elif code == "i":
            (v,) = struct.unpack_from("<q", payload, off)
            off += 8
            out.append(v)
        else:
            (v,) = struct.unpack_from("<d", payload, off)
            off += 8
            out.append(v)
    return tuple(out)


def sha256_file(path: str | Path, chunk: int = 1 << 20) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        while True:
            block = fh.read(chunk)
            if not block:
                break
            h.update(block)
    return h.hexdigest()


def open_gzip_deterministic(path: str | Path) -> IO[bytes]:
    """Gzip writer with zeroed mtime so identical content is byte-identical."""
    import gzip

    return gzip.GzipFile(filename=str(path), mode="wb", mtime=0)
