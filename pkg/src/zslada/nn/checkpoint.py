"""Single-file checkpoint container.

Layout: one JSON header line (utf-8, ends with ``\\n``) followed by the
raw little-endian float64 bytes of every array, concatenated in header
order.  The header records ``format_version``, a free-form ``meta``
dict, and ``arrays`` as ``[name, length]`` pairs.  Raw bytes make the
round-trip bitwise exact, which downstream determinism checks rely on.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import DataError
from .mlp import MlpNetwork, MlpSpec

FORMAT_VERSION = 1
_F8 = np.dtype("<f8")


def save_container(path: str | Path, meta: dict,
                   arrays: dict[str, np.ndarray]) -> None:
    entries = []
    blobs = []
    for name, arr in arrays.items():
        flat = np.ascontiguousarray(np.asarray(arr, dtype=np.float64).ravel(),
                                    dtype=_F8)
        entries.append([name, int(flat.size)])
        blobs.append(flat.tobytes())
    header = {"format_version": FORMAT_VERSION, "meta": meta, "arrays": entries}
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8"))
        fh.write(b"\n")
        for blob in blobs:
            fh.write(blob)


def load_container(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    if not path.exists():
        raise DataError("MISSING_FILE", f"checkpoint not found: {path}")
    with open(path, "rb") as fh:
        line = fh.readline()
        try:
            header = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise DataError("BAD_CHECKPOINT", f"unreadable header in {path}: {exc}")
        if header.get("format_version") != FORMAT_VERSION:
            raise DataError(
                "BAD_CHECKPOINT",
                f"unsupported format_version {header.get('format_version')!r} in {path}")
        body = fh.read()
    arrays: dict[str, np.ndarray] = {}
    offset = 0
    for entry in header.get("arrays", []):
        name, length = entry[0], int(entry[1])
        nbytes = length * 8
        chunk = body[offset:offset + nbytes]
        if len(chunk) != nbytes:
            raise DataError("BAD_CHECKPOINT",
                            f"truncated array {name!r} in {path}")
        arrays[name] = np.frombuffer(chunk, dtype=_F8).copy()
        offset += nbytes
    if offset != len(body):
        raise DataError("BAD_CHECKPOINT",
                        f"{len(body) - offset} trailing bytes in {path}")
    return header.get("meta", {}), arrays


def save_mlp(path: str | Path, net: MlpNetwork, extra_meta: dict | None = None) -> None:
    meta = {
        "kind": "mlp",
        "spec": net.spec.to_dict(),
        "seed": net.seed,
        "mode": net.mode,
    }
    if extra_meta:
        meta.update(extra_meta)
    save_container(path, meta, {"params": net.params, "stats": net.stats})


def load_mlp(path: str | Path) -> MlpNetwork:
    meta, arrays = load_container(path)
    if meta.get("kind") != "mlp":
        raise DataError("BAD_CHECKPOINT",
                        f"expected an mlp checkpoint, found kind {meta.get('kind')!r}")
    spec = MlpSpec.from_dict(meta["spec"])
    return MlpNetwork(spec=spec, params=arrays["params"], stats=arrays["stats"],
                      seed=meta.get("seed"), mode=meta.get("mode", "train"))
