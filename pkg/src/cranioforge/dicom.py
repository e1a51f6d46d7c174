"""Reader for a deliberately small DICOM subset.

Only Part-10 files (128-byte preamble + ``DICM``) in explicit-VR little
endian with uncompressed 16-bit single-frame pixel data are accepted.
Anything else fails loudly rather than being half-decoded.
"""
from __future__ import annotations

import logging
import struct
from pathlib import Path

import numpy as np

from .errors import (
    InconsistentGeometry,
    MalformedDicom,
    MissingRequiredTag,
    NonUniformSliceSpacing,
    UnsupportedTransferSyntax,
    VolumeIOError,
)
from .volume import Volume

logger = logging.getLogger(__name__)

EXPLICIT_VR_LITTLE_ENDIAN = "1.2.840.10008.1.2.1"

ROWS = (0x0028, 0x0010)
COLUMNS = (0x0028, 0x0011)
PIXEL_SPACING = (0x0028, 0x0030)
IMAGE_POSITION = (0x0020, 0x0032)
IMAGE_ORIENTATION = (0x0020, 0x0037)
BITS_ALLOCATED = (0x0028, 0x0100)
PIXEL_REPRESENTATION = (0x0028, 0x0103)
RESCALE_INTERCEPT = (0x0028, 0x1052)
RESCALE_SLOPE = (0x0028, 0x1053)
NUMBER_OF_FRAMES = (0x0028, 0x0008)
SAMPLES_PER_PIXEL = (0x0028, 0x0002)
PIXEL_DATA = (0x7FE0, 0x0010)
TRANSFER_SYNTAX = (0x0002, 0x0010)

_LONG_VRS = {b"OB", b"OD", b"OF", b"OL", b"OV", b"OW", b"SQ", b"SV", b"UC", b"UN", b"UR", b"UT", b"UV"}
_UNDEFINED = 0xFFFFFFFF
_ITEM = (0xFFFE, 0xE000)
_ITEM_END = (0xFFFE, 0xE00D)
_SEQ_END = (0xFFFE, 0xE0DD)

MAX_GAP_DEVIATION = 0.10


def _skip_undefined_sequence(buf, pos):
    """Skip items of an undefined-length SQ; returns position after its delimiter."""
    while True:
        if pos + 8 > len(buf):
            raise MalformedDicom("unterminated sequence")
        group, elem, length = struct.unpack_from("<HHI", buf, pos)
        pos += 8
        tag = (group, elem)
        if tag == _SEQ_END:
            return pos
        if tag != _ITEM:
            raise MalformedDicom(f"unexpected tag {group:04X},{elem:04X} inside sequence")
        if length == _UNDEFINED:
            # undefined-length item: nested explicit-VR elements until item delimiter
            while True:
                if pos + 8 > len(buf):
                    raise MalformedDicom("unterminated item")
                g, e = struct.unpack_from("<HH", buf, pos)
                if (g, e) == _ITEM_END:
                    pos += 8
                    break
                _, _, _, pos = _read_element(buf, pos)
        else:
            pos += length


def _read_element(buf, pos):
    """Parse one explicit-VR LE element at ``pos``.

    Returns ``(tag, vr, value_bytes_or_None, next_pos)``; the value is
    ``None`` for skipped undefined-length sequences.
    """
    if pos + 8 > len(buf):
        raise MalformedDicom("truncated element header")
    group, elem = struct.unpack_from("<HH", buf, pos)
    vr = bytes(buf[pos + 4 : pos + 6])
    if vr in _LONG_VRS:
        if pos + 12 > len(buf):
            raise MalformedDicom("truncated element header")
        (length,) = struct.unpack_from("<I", buf, pos + 8)
        pos += 12
    else:
        if not vr.isalpha():
            raise MalformedDicom(f"invalid VR at offset {pos}; not explicit VR?")
        (length,) = struct.unpack_from("<H", buf, pos + 6)
        pos += 8
    tag = (group, elem)
    if length == _UNDEFINED:
        if tag == PIXEL_DATA:
            raise UnsupportedTransferSyntax("encapsulated (compressed) pixel data")
        if vr in (b"SQ", b"UN"):
            return tag, vr, None, _skip_undefined_sequence(buf, pos)
        raise MalformedDicom(f"undefined length for VR {vr!r}")
    if pos + length > len(buf):
        raise MalformedDicom(f"element {group:04X},{elem:04X} runs past end of file")
    return tag, vr, bytes(buf[pos : pos + length]), pos + length


def parse_dicom(path):
    """Parse one file into ``{tag: (vr, bytes)}`` for top-level elements."""
    buf = Path(path).read_bytes()
    if len(buf) < 132 or buf[128:132] != b"DICM":
        raise MalformedDicom(f"{path}: missing 128-byte preamble and DICM magic")
    elements = {}
    pos = 132
    while pos < len(buf):
        tag, vr, value, pos = _read_element(buf, pos)
        if value is not None:
            elements[tag] = (vr, value)
        if tag[0] == 0x0002 and TRANSFER_SYNTAX in elements:
            ts = _text(elements[TRANSFER_SYNTAX][1])
            if ts != EXPLICIT_VR_LITTLE_ENDIAN:
                raise UnsupportedTransferSyntax(f"{path}: transfer syntax {ts}")
    if TRANSFER_SYNTAX not in elements:
        raise MissingRequiredTag(f"{path}: (0002,0010) TransferSyntaxUID")
    return elements


def _text(raw):
    return raw.decode("ascii", errors="replace").strip("\x00 ").strip()


def _decimals(raw):
    return [float(part) for part in _text(raw).split("\\") if part.strip()]


def _get(elements, tag, path, name):
    try:
        return elements[tag][1]
    except KeyError:
        raise MissingRequiredTag(f"{path}: ({tag[0]:04X},{tag[1]:04X}) {name}") from None


def _us(raw):
    return struct.unpack_from("<H", raw)[0]


class _Slice:
    __slots__ = ("path", "rows", "cols", "spacing", "position", "pixels")


def read_slice(path):
    """Decode one slice into HU values plus its geometry."""
    el = parse_dicom(path)
    s = _Slice()
    s.path = str(path)
    s.rows = _us(_get(el, ROWS, path, "Rows"))
    s.cols = _us(_get(el, COLUMNS, path, "Columns"))
    s.spacing = tuple(_decimals(_get(el, PIXEL_SPACING, path, "PixelSpacing")))
    s.position = tuple(_decimals(_get(el, IMAGE_POSITION, path, "ImagePositionPatient")))
    if len(s.spacing) != 2 or len(s.position) != 3:
        raise MalformedDicom(f"{path}: PixelSpacing/ImagePositionPatient arity")
    bits = _us(_get(el, BITS_ALLOCATED, path, "BitsAllocated"))
    if bits != 16:
        raise UnsupportedTransferSyntax(f"{path}: BitsAllocated={bits}, only 16 supported")
    signed = _us(_get(el, PIXEL_REPRESENTATION, path, "PixelRepresentation")) == 1
    if NUMBER_OF_FRAMES in el and int(_decimals(el[NUMBER_OF_FRAMES][1])[0]) != 1:
        raise UnsupportedTransferSyntax(f"{path}: multi-frame images are not supported")
    if SAMPLES_PER_PIXEL in el and _us(el[SAMPLES_PER_PIXEL][1]) != 1:
        raise UnsupportedTransferSyntax(f"{path}: only single-sample (grey) pixels supported")
    if IMAGE_ORIENTATION in el:
        cosines = np.array(_decimals(el[IMAGE_ORIENTATION][1]))
        if cosines.shape != (6,) or not np.allclose(cosines, [1, 0, 0, 0, 1, 0], atol=1e-4):
            raise InconsistentGeometry(f"{path}: non-axial ImageOrientationPatient {cosines.tolist()}")
    if RESCALE_SLOPE in el and RESCALE_INTERCEPT in el:
        slope = _decimals(el[RESCALE_SLOPE][1])[0]
        intercept = _decimals(el[RESCALE_INTERCEPT][1])[0]
    else:
        logger.warning("%s: RescaleSlope/Intercept missing, using 1/0", path)
        slope = _decimals(el[RESCALE_SLOPE][1])[0] if RESCALE_SLOPE in el else 1.0
        intercept = _decimals(el[RESCALE_INTERCEPT][1])[0] if RESCALE_INTERCEPT in el else 0.0
    raw = _get(el, PIXEL_DATA, path, "PixelData")
    n = s.rows * s.cols
    if len(raw) < 2 * n:
        raise MalformedDicom(f"{path}: PixelData has {len(raw)} bytes, need {2 * n}")
    stored = np.frombuffer(raw[: 2 * n], dtype="<i2" if signed else "<u2").reshape(s.rows, s.cols)
    s.pixels = rescale(stored, slope, intercept)
    return s


def rescale(stored, slope, intercept):
    """Stored values to HU (``slope * s + intercept``), rounded to int16."""
    hu = np.rint(slope * stored.astype(np.float64) + intercept)
    if hu.size and (hu.min() < -32768 or hu.max() > 32767):
        raise VolumeIOError("rescaled HU values exceed the int16 range")
    return hu.astype(np.int16)


def read_dicom_series(directory):
    """Load every DICOM file under ``directory`` into one :class:`Volume`.

    Slices are ordered by the z component of ImagePositionPatient, never by
    filename. Non-DICOM files (no ``DICM`` magic) are ignored.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise VolumeIOError(f"{directory}: not a directory")
    slices = []
    for path in sorted(p for p in directory.iterdir() if p.is_file()):
        with open(path, "rb") as fh:
            head = fh.read(132)
        if len(head) < 132 or head[128:132] != b"DICM":
            logger.debug("skipping non-DICOM file %s", path)
            continue
        slices.append(read_slice(path))
    if not slices:
        raise VolumeIOError(f"{directory}: no DICOM files found")

    first = slices[0]
    for s in slices[1:]:
        if (s.rows, s.cols) != (first.rows, first.cols) or not np.allclose(s.spacing, first.spacing):
            raise InconsistentGeometry(
                f"{s.path}: {s.rows}x{s.cols} @ {s.spacing} differs from "
                f"{first.path}: {first.rows}x{first.cols} @ {first.spacing}"
            )
    # ties broken by x, y so the ordering never depends on discovery order
    slices.sort(key=lambda s: (s.position[2], s.position[0], s.position[1]))
    z = np.array([s.position[2] for s in slices])
    if len(slices) > 1:
        gaps = np.diff(z)
        dz = float(np.median(gaps))
        if dz <= 0 or np.any(np.abs(gaps - dz) > MAX_GAP_DEVIATION * dz):
            raise NonUniformSliceSpacing(f"slice gaps {gaps.tolist()} deviate from median {dz}")
    else:
        dz = 1.0
    row_spacing, col_spacing = first.spacing
    scalars = np.stack([s.pixels for s in slices])
    lowest = slices[0].position
    return Volume(scalars, (col_spacing, row_spacing, dz), lowest)
