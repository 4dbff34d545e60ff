"""Binary checkpoint files and learning-curve CSVs.

Checkpoint layout (all integers little-endian)::

    magic      8 bytes   b"ALOCCKPT"
    hlen       uint32    length of the UTF-8 JSON header
    header     hlen bytes
    payload    float64 little-endian arrays, concatenated in header order

The header holds ``format_version``, ``arch`` (architecture tag),
``n_landmarks``, ``widths`` (layer widths), ``spec`` (the full
:class:`~activeloc.nets.ArchSpec`) and ``blocks``: a list of
``{"name", "shape"}`` entries describing the payload.
"""

import csv
import json
import struct

import numpy as np

from .nets import CONV_CHANNELS, EMB, HEAD, LM_HIDDEN, ActorCritic, ArchSpec

MAGIC = b"ALOCCKPT"
FORMAT_VERSION = 1
CURVE_COLUMNS = ("env_steps", "mean_eval_reward", "std_eval_reward", "mean_mae")


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, policy: ActorCritic, meta=None):
    blocks = policy.named_blocks()
    header = {
        "format_version": FORMAT_VERSION,
        "arch": policy.spec.arch,
        "n_landmarks": policy.spec.n_landmarks,
        "widths": {"emb": EMB, "lm_hidden": LM_HIDDEN, "head": HEAD,
                   "conv": list(CONV_CHANNELS)},
        "spec": policy.spec.to_dict(),
        "blocks": [{"name": k, "shape": list(v.shape)} for k, v in blocks.items()],
        "meta": meta or {},
    }
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(raw)))
        f.write(raw)
        for v in blocks.values():
            f.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def read_header(path):
    with open(path, "rb") as f:
        if f.read(len(MAGIC)) != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        (hlen,) = struct.unpack("<I", f.read(4))
        return json.loads(f.read(hlen).decode("utf-8")), f.tell()


def load_checkpoint(path):
    header, offset = read_header(path)
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {header.get('format_version')}")
    spec = ArchSpec.from_dict(header["spec"])
    with open(path, "rb") as f:
        f.seek(offset)
        payload = f.read()
    blocks, pos = {}, 0
    for entry in header["blocks"]:
        n = int(np.prod(entry["shape"], dtype=np.int64))
        arr = np.frombuffer(payload, dtype="<f8", count=n, offset=pos)
        blocks[entry["name"]] = arr.astype(np.float64).reshape(entry["shape"])
        pos += 8 * n
    if pos != len(payload):
        raise CheckpointError(f"{path}: payload size does not match header")
    return ActorCritic.from_blocks(spec, blocks), header


def write_curve(path, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(CURVE_COLUMNS)
        for r in rows:
            w.writerow([int(r[0])] + [repr(float(v)) for v in r[1:]])


def read_curve(path):
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if tuple(header) != CURVE_COLUMNS:
            raise CheckpointError(f"{path}: unexpected curve columns {header}")
        return [(int(r[0]), float(r[1]), float(r[2]), float(r[3])) for r in reader]
