"""Versioned binary container for networks, optimizer state and replay buffers.

Layout (all integers little-endian)::

    magic    8 bytes  b"WFNCKPT\\0"
    version  u32
    count    u32
    count x entry:
        name_len u16, name (utf-8)
        kind     u8   (0 = float64, 1 = int64, 2 = raw bytes)
        ndim     u8, shape ndim x u64
        payload  little-endian data
"""

import struct

import numpy as np

MAGIC = b"WFNCKPT\x00"
VERSION = 1
_KINDS = {0: np.dtype("<f8"), 1: np.dtype("<i8")}


class CheckpointError(ValueError):
    pass


def dumps(entries):
    """Serialize an ordered ``{name: ndarray | bytes}`` mapping."""
    out = [MAGIC, struct.pack("<II", VERSION, len(entries))]
    for name, value in entries.items():
        key = name.encode("utf-8")
        out.append(struct.pack("<H", len(key)) + key)
        if isinstance(value, (bytes, bytearray)):
            out.append(struct.pack("<BBQ", 2, 1, len(value)) + bytes(value))
            continue
        arr = np.asarray(value)
        if arr.dtype.kind == "f":
            kind = 0
        elif arr.dtype.kind in "iub":
            kind = 1
        else:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for {name!r}")
        arr = np.ascontiguousarray(arr, dtype=_KINDS[kind])
        out.append(struct.pack("<BB", kind, arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


def loads(data):
    if data[:8] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, count = struct.unpack_from("<II", data, 8)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 16
    entries = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos:pos + n].decode("utf-8")
            pos += n
            kind, ndim = struct.unpack_from("<BB", data, pos)
            pos += 2
            shape = struct.unpack_from(f"<{ndim}Q", data, pos)
            pos += 8 * ndim
            if kind == 2:
                entries[name] = bytes(data[pos:pos + shape[0]])
                pos += shape[0]
                continue
            dtype = _KINDS[kind]
            size = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
            entries[name] = np.frombuffer(data[pos:pos + size], dtype=dtype).reshape(shape).copy()
            pos += size
    except (struct.error, KeyError, ValueError) as exc:
        raise CheckpointError(f"corrupt checkpoint: {exc}") from None
    if pos != len(data):
        raise CheckpointError("trailing bytes after last entry")
    return entries


def save(path, entries):
    with open(path, "wb") as fh:
        fh.write(dumps(entries))


def load(path):
    with open(path, "rb") as fh:
        return loads(fh.read())


def network_entries(prefix, net):
    from .nn import ACTIVATIONS
    spec = net.params.spec
    return {
        f"{prefix}.sizes": spec.sizes,
        f"{prefix}.activation": np.array([ACTIVATIONS[spec.activation]]),
        f"{prefix}.params": net.params.values,
        f"{prefix}.adam_m": net.opt.m,
        f"{prefix}.adam_v": net.opt.v,
        f"{prefix}.adam_t": np.array([net.opt.t]),
        f"{prefix}.adam_hyper": np.array([net.opt.beta1, net.opt.beta2, net.opt.eps_opt]),
    }


def network_from_entries(prefix, entries):
    from .nn import ACTIVATIONS, AdamState, MlpParams, MlpSpec, Network
    sizes = [int(x) for x in entries[f"{prefix}.sizes"]]
    act = {v: k for k, v in ACTIVATIONS.items()}[int(entries[f"{prefix}.activation"][0])]
    spec = MlpSpec(sizes[0], tuple(sizes[1:-1]), sizes[-1], act)
    b1, b2, eps = (float(x) for x in entries[f"{prefix}.adam_hyper"])
    opt = AdamState(entries[f"{prefix}.adam_m"], entries[f"{prefix}.adam_v"],
                    int(entries[f"{prefix}.adam_t"][0]), b1, b2, eps)
    return Network(MlpParams(spec, entries[f"{prefix}.params"]), opt)
