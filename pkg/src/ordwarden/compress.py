"""Deterministic gzip sizing and the compressibility score."""

from __future__ import annotations

import shutil
import struct
import subprocess
import zlib
from dataclasses import dataclass
from fractions import Fraction

from .model import OrdwardenError

GZIP_MAGIC = b"\x1f\x8b"
OS_UNIX = 3
XFL_MAX = 2


class EmptyInput(OrdwardenError, ValueError):
    pass


@dataclass(frozen=True)
class CompressorSpec:
    """gzip member settings equivalent to ``gzip -9 --no-name``."""

    level: int = 9
    mtime: int = 0
    os_byte: int = OS_UNIX
    mem_level: int = 8


DEFAULT_COMPRESSOR = CompressorSpec()


def gzip_member(s: bytes, spec: CompressorSpec = DEFAULT_COMPRESSOR) -> bytes:
    """Build a single gzip member with no filename field.

    The header is written by hand because the stdlib gzip module pins the OS
    byte to 255.
    """
    xfl = XFL_MAX if spec.level == 9 else (4 if spec.level == 1 else 0)
    header = GZIP_MAGIC + struct.pack("<BBIBB", 8, 0, spec.mtime, xfl, spec.os_byte)
    comp = zlib.compressobj(spec.level, zlib.DEFLATED, -zlib.MAX_WBITS, spec.mem_level)
    body = comp.compress(s) + comp.flush()
    trailer = struct.pack("<II", zlib.crc32(s) & 0xFFFFFFFF, len(s) & 0xFFFFFFFF)
    return header + body + trailer


def compress_len(s: bytes, spec: CompressorSpec = DEFAULT_COMPRESSOR) -> int:
    if not s:
        raise EmptyInput("nothing to compress")
    return len(gzip_member(s, spec))


def kappa(s_len: int, c_len: int) -> Fraction:
    """Compressibility score: plain length over compressed length."""
    if s_len <= 0 or c_len <= 0:
        raise ValueError("lengths must be positive, got %r/%r" % (s_len, c_len))
    return Fraction(s_len, c_len)


def system_gzip_available() -> bool:
    return shutil.which("gzip") is not None


def system_gzip(s: bytes) -> bytes:
    """Run the host's ``gzip -9 --no-name``; used only to cross-check gzip_member."""
    exe = shutil.which("gzip")
    if exe is None:
        raise OrdwardenError("gzip executable not found")
    res = subprocess.run([exe, "-9", "--no-name", "-c"], input=s, stdout=subprocess.PIPE, check=True)
    return res.stdout
