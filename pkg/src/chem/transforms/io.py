"""Serialization of coefficient fields.

Binary layout (all integers little-endian)::

    4 bytes   magic b"CHCF"
    u16       format version (1)
    u32       header length H in bytes
    H bytes   UTF-8 JSON header: {"layout": ..., "rms": [...] | null,
              "guarded": [...] | null}
    8*t bytes coefficient values as little-endian float64

The JSON form holds the same header plus a "values" list and is meant for
small fields.
"""

import json
import struct

import numpy as np

from .layout import CoefficientField, SubbandLayout

MAGIC = b"CHCF"
VERSION = 1
_PREAMBLE = struct.Struct("<4sHI")


def _header(coef):
    return {
        "layout": coef.layout.to_dict(),
        "rms": None if coef.rms is None else [float(v) for v in coef.rms],
        "guarded": None if coef.guarded is None else [bool(v) for v in coef.guarded],
    }


def _from_header(header, values):
    return CoefficientField(
        SubbandLayout.from_dict(header["layout"]),
        values,
        None if header["rms"] is None else np.array(header["rms"]),
        None if header["guarded"] is None else np.array(header["guarded"], dtype=bool),
    )


def field_to_bytes(coef):
    header = json.dumps(_header(coef), sort_keys=True).encode("utf-8")
    payload = np.asarray(coef.values, dtype="<f8").tobytes()
    return _PREAMBLE.pack(MAGIC, VERSION, len(header)) + header + payload


def field_from_bytes(data):
    if len(data) < _PREAMBLE.size:
        raise ValueError("truncated coefficient file")
    magic, version, hlen = _PREAMBLE.unpack_from(data)
    if magic != MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ValueError(f"unsupported coefficient format version {version}")
    start = _PREAMBLE.size
    header = json.loads(data[start : start + hlen].decode("utf-8"))
    payload = data[start + hlen :]
    layout_size = SubbandLayout.from_dict(header["layout"]).size
    if len(payload) != 8 * layout_size:
        raise ValueError(f"payload holds {len(payload)} bytes, expected {8 * layout_size}")
    return _from_header(header, np.frombuffer(payload, dtype="<f8").astype(np.float64))


def field_to_json(coef):
    doc = _header(coef)
    doc["values"] = [float(v) for v in coef.values]
    return json.dumps(doc, sort_keys=True)


def field_from_json(text):
    doc = json.loads(text)
    return _from_header(doc, np.array(doc["values"], dtype=np.float64))


def save_field(path, coef):
    with open(path, "wb") as fh:
        fh.write(field_to_bytes(coef))


def load_field(path):
    with open(path, "rb") as fh:
        return field_from_bytes(fh.read())
