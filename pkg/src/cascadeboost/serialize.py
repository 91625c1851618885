"""Bit-exact model records.

A record is a magic line, one line of JSON describing the family, spaces,
metadata and array layout, then the raw little-endian array bytes in
header order. Cascades are a manifest line followed by length-prefixed
model records.
"""

from __future__ import annotations

import io
import json
from pathlib import Path

import numpy as np

from .core import MetaModel, Space
from .errors import FormatError
from .metamodels.classmix import ClassMixture
from .metamodels.gmm import GMM
from .metamodels.rbm import RBM
from .metamodels.tabular import Tabular
from .metamodels.vae import VAE

MODEL_MAGIC = b"GBMR 1\n"
CASCADE_MAGIC = b"GBCS 1\n"

FAMILIES: dict[str, type[MetaModel]] = {
    "gmm": GMM,
    "rbm": RBM,
    "vae": VAE,
    "tabular": Tabular,
    "classmix": ClassMixture,
}


def _dtype_tag(a: np.ndarray) -> str:
    if a.dtype.kind == "f":
        return "<f8"
    if a.dtype.kind in "iu":
        return "<i8"
    raise FormatError(f"cannot serialize dtype {a.dtype}")


def model_to_bytes(model: MetaModel) -> bytes:
    params = model.get_params()
    names = sorted(params)
    arrays = [np.ascontiguousarray(params[k], dtype=_dtype_tag(np.asarray(params[k]))) for k in names]
    header = {
        "family": model.family,
        "visible": str(model.visible_space),
        "hidden": str(model.hidden_space),
        "meta": model.get_meta(),
        "arrays": [{"name": k, "dtype": a.dtype.str, "shape": list(a.shape)} for k, a in zip(names, arrays)],
    }
    out = io.BytesIO()
    out.write(MODEL_MAGIC)
    out.write(json.dumps(header, sort_keys=True).encode() + b"\n")
    for a in arrays:
        out.write(a.tobytes())
    return out.getvalue()


def model_from_bytes(buf: bytes) -> MetaModel:
    if not buf.startswith(MODEL_MAGIC):
        raise FormatError("not a model record (bad magic at offset 0)")
    end = buf.find(b"\n", len(MODEL_MAGIC))
    if end < 0:
        raise FormatError(f"truncated model header at offset {len(MODEL_MAGIC)}")
    try:
        header = json.loads(buf[len(MODEL_MAGIC):end])
    except json.JSONDecodeError as exc:
        raise FormatError(f"bad model header at offset {len(MODEL_MAGIC) + exc.pos}: {exc.msg}") from None
    family = header.get("family")
    if family not in FAMILIES:
        raise FormatError(f"unknown model family {family!r}")
    pos = end + 1
    params = {}
    for spec in header["arrays"]:
        dtype = np.dtype(spec["dtype"])
        count = int(np.prod(spec["shape"], dtype=np.int64))
        nbytes = count * dtype.itemsize
        if pos + nbytes > len(buf):
            raise FormatError(f"truncated array {spec['name']!r} at offset {pos}")
        params[spec["name"]] = np.frombuffer(buf, dtype=dtype, count=count, offset=pos).reshape(spec["shape"]).copy()
        pos += nbytes
    if pos != len(buf):
        raise FormatError(f"trailing bytes after model record at offset {pos}")
    meta = dict(header["meta"], visible=header["visible"], hidden=header["hidden"])
    model = FAMILIES[family].from_params(meta, params)
    if str(model.visible_space) != header["visible"] or str(model.hidden_space) != header["hidden"]:
        raise FormatError("model spaces do not match the record header")
    return model


def cascade_to_bytes(models) -> bytes:
    records = [model_to_bytes(m) for m in models]
    chain = [str(models[0].visible_space)] + [str(m.hidden_space) for m in models]
    manifest = {"count": len(records), "spaces": chain, "lengths": [len(r) for r in records]}
    return CASCADE_MAGIC + json.dumps(manifest, sort_keys=True).encode() + b"\n" + b"".join(records)


def cascade_from_bytes(buf: bytes) -> list[MetaModel]:
    if not buf.startswith(CASCADE_MAGIC):
        raise FormatError("not a cascade record (bad magic at offset 0)")
    end = buf.find(b"\n", len(CASCADE_MAGIC))
    if end < 0:
        raise FormatError(f"truncated cascade manifest at offset {len(CASCADE_MAGIC)}")
    manifest = json.loads(buf[len(CASCADE_MAGIC):end])
    pos, models = end + 1, []
    for n in manifest["lengths"]:
        if pos + n > len(buf):
            raise FormatError(f"truncated model record at offset {pos}")
        models.append(model_from_bytes(buf[pos:pos + n]))
        pos += n
    if len(models) != manifest["count"]:
        raise FormatError("cascade manifest count mismatch")
    chain = [str(models[0].visible_space)] + [str(m.hidden_space) for m in models]
    if chain != manifest["spaces"]:
        raise FormatError("cascade space chain does not match manifest")
    return models


def save_model(model: MetaModel, path) -> None:
    Path(path).write_bytes(model_to_bytes(model))


def load_model(path) -> MetaModel:
    return model_from_bytes(Path(path).read_bytes())


def load_any(path):
    """Load either a single model record or a cascade record."""
    buf = Path(path).read_bytes()
    if buf.startswith(CASCADE_MAGIC):
        return cascade_from_bytes(buf)
    return model_from_bytes(buf)


def space_from_text(text: str) -> Space:
    try:
        return Space.parse(text)
    except (ValueError, KeyError) as exc:
        raise FormatError(f"bad space {text!r}") from exc
