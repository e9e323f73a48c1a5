"""Binary checkpoint format for learned parameters.

Layout (all integers little-endian):

    magic  b"IRFV1"
    u32    format version (currently 1)
    u32    length of the config echo, then that many UTF-8 bytes
    u32    length of the rng summary, then that many UTF-8 bytes
    u32    number of sections
    per section:
        u16 name length, name bytes
        u32 number of tensors
        per tensor:
            u16 name length, name bytes
            u8  rank
            u32 per dimension
            float64 little-endian values, C order

Saving the result of a load reproduces the original file byte for byte.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"IRFV1"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _write_str(fh, text, fmt="<I"):
    raw = text.encode("utf-8")
    fh.write(struct.pack(fmt, len(raw)))
    fh.write(raw)


def _read_exact(fh, n):
    raw = fh.read(n)
    if len(raw) != n:
        raise CheckpointError("truncated checkpoint")
    return raw


def _read_str(fh, fmt="<I"):
    (n,) = struct.unpack(fmt, _read_exact(fh, struct.calcsize(fmt)))
    return _read_exact(fh, n).decode("utf-8")


def save(path, sections, config_echo="", rng_summary=""):
    """Write named tensor sections, e.g. {"reward": eta, "value": phi}."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        _write_str(fh, config_echo)
        _write_str(fh, rng_summary)
        fh.write(struct.pack("<I", len(sections)))
        for section_name, tensors in sections.items():
            _write_str(fh, section_name, "<H")
            fh.write(struct.pack("<I", len(tensors)))
            for name, value in tensors.items():
                # tobytes() always serializes in C order; asarray keeps
                # 0-d shapes intact where ascontiguousarray would not
                arr = np.asarray(value, dtype="<f8")
                _write_str(fh, name, "<H")
                fh.write(struct.pack("<B", arr.ndim))
                for dim in arr.shape:
                    fh.write(struct.pack("<I", dim))
                fh.write(arr.tobytes())


def load(path):
    """Read a checkpoint; returns (sections, config_echo, rng_summary)."""
    with open(path, "rb") as fh:
        if _read_exact(fh, len(MAGIC)) != MAGIC:
            raise CheckpointError("not a checkpoint file (bad magic)")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        config_echo = _read_str(fh)
        rng_summary = _read_str(fh)
        (n_sections,) = struct.unpack("<I", _read_exact(fh, 4))
        sections = {}
        for _ in range(n_sections):
            section_name = _read_str(fh, "<H")
            (n_tensors,) = struct.unpack("<I", _read_exact(fh, 4))
            tensors = {}
            for _ in range(n_tensors):
                name = _read_str(fh, "<H")
                (rank,) = struct.unpack("<B", _read_exact(fh, 1))
                shape = tuple(struct.unpack("<I", _read_exact(fh, 4))[0]
                              for _ in range(rank))
                count = int(np.prod(shape)) if shape else 1
                data = np.frombuffer(_read_exact(fh, 8 * count), dtype="<f8")
                tensors[name] = data.reshape(shape).copy()
            sections[section_name] = tensors
        if fh.read(1):
            raise CheckpointError("trailing bytes after checkpoint payload")
    return sections, config_echo, rng_summary


def validate_shapes(tensors, reference):
    """Check loaded tensors against freshly initialized reference params."""
    missing = set(reference) - set(tensors)
    extra = set(tensors) - set(reference)
    if missing or extra:
        raise CheckpointError(
            f"parameter names mismatch (missing {sorted(missing)}, "
            f"unexpected {sorted(extra)})")
    for name, ref in reference.items():
        if tensors[name].shape != np.asarray(ref).shape:
            raise CheckpointError(
                f"shape mismatch for {name}: checkpoint "
                f"{tensors[name].shape}, architecture {np.asarray(ref).shape}")
    return tensors
