"""Binary checkpoint format for trained networks.

Layout, all little-endian:

    magic    4 bytes  b"MTPW"
    version  u16      currently 1
    tag_len  u16      architecture tag length
    tag      utf-8 bytes
    n_tensor u32
    per tensor:
        name_len u16, name utf-8 bytes
        rank     u32, dims u32 * rank
        data     f32 * prod(dims)
    crc      u32      CRC32 of every preceding byte

Hyperparameters ride along as rank-0 tensors named "hp.<field>", so a file
fully describes how to rebuild its network.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np
import torch

from .networks import ConvSpikingNet, RecurrentSpikingNet
from .neurons import LIFParams

MAGIC = b"MTPW"
VERSION = 1


def save_checkpoint(path: str | Path, arch_tag: str,
                    tensors: dict[str, np.ndarray]) -> None:
    """Serialize named float32 tensors under an architecture tag."""
    tag = arch_tag.encode("utf-8")
    if len(tag) > 0xFFFF:
        raise ValueError("architecture tag too long")
    parts = [MAGIC, struct.pack("<HH", VERSION, len(tag)), tag,
             struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f4")
        nb = name.encode("utf-8")
        if len(nb) > 0xFFFF:
            raise ValueError(f"tensor name too long: {name!r}")
        parts.append(struct.pack("<H", len(nb)))
        parts.append(nb)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes(order="C"))
    blob = b"".join(parts)
    blob += struct.pack("<I", zlib.crc32(blob) & 0xFFFFFFFF)
    Path(path).write_bytes(blob)


def load_checkpoint(path: str | Path) -> tuple[str, dict[str, np.ndarray]]:
    """Parse and CRC-verify a checkpoint; returns (arch_tag, tensors)."""
    blob = Path(path).read_bytes()
    if len(blob) < 12:
        raise ValueError(f"{path}: truncated checkpoint")
    stored_crc, = struct.unpack_from("<I", blob, len(blob) - 4)
    if stored_crc != (zlib.crc32(blob[:-4]) & 0xFFFFFFFF):
        raise ValueError(f"{path}: checksum mismatch")
    if blob[:4] != MAGIC:
        raise ValueError(f"{path}: bad magic {blob[:4]!r}")
    off = 4
    version, tag_len = struct.unpack_from("<HH", blob, off)
    off += 4
    if version != VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    tag = blob[off:off + tag_len].decode("utf-8")
    off += tag_len
    n_tensors, = struct.unpack_from("<I", blob, off)
    off += 4
    tensors: dict[str, np.ndarray] = {}
    limit = len(blob) - 4
    for _ in range(n_tensors):
        if off + 2 > limit:
            raise ValueError(f"{path}: truncated tensor table")
        name_len, = struct.unpack_from("<H", blob, off)
        off += 2
        name = blob[off:off + name_len].decode("utf-8")
        off += name_len
        rank, = struct.unpack_from("<I", blob, off)
        off += 4
        dims = struct.unpack_from(f"<{rank}I", blob, off)
        off += 4 * rank
        count = int(np.prod(dims, dtype=np.int64)) if rank else 1
        nbytes = count * 4
        if off + nbytes > limit:
            raise ValueError(f"{path}: truncated tensor data for {name!r}")
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=off)
        tensors[name] = arr.reshape(dims).copy()
        off += nbytes
    if off != limit:
        raise ValueError(f"{path}: {limit - off} stray bytes after tensors")
    return tag, tensors


def _net_tensors(net) -> dict[str, np.ndarray]:
    out = {f"hp.{k}": np.float32(v) for k, v in net.hyperparams().items()}
    for name, p in net.named_parameters():
        out[name] = p.detach().cpu().numpy().astype(np.float32)
    return out


def save_net(path: str | Path, net) -> None:
    save_checkpoint(path, net.arch_tag, _net_tensors(net))


def load_net(path: str | Path):
    """Rebuild a network from its checkpoint (weights in float32)."""
    tag, tensors = load_checkpoint(path)
    hp = {k[3:]: float(v) for k, v in tensors.items() if k.startswith("hp.")}
    weights = {k: v for k, v in tensors.items() if not k.startswith("hp.")}
    lif = LIFParams(tau_m=hp["tau_m"], threshold=hp["threshold"],
                    dt=hp["dt"], refractory_steps=int(hp["refractory_steps"]))
    readout_lif = LIFParams(
        tau_m=hp["readout_tau_m"], threshold=hp["readout_threshold"],
        dt=hp["readout_dt"],
        refractory_steps=int(hp["readout_refractory_steps"]))
    if tag == RecurrentSpikingNet.arch_tag:
        net = RecurrentSpikingNet(
            n_in=int(hp["n_in"]), n_hidden=int(hp["n_hidden"]),
            n_out=int(hp["n_out"]), lif=lif, readout_lif=readout_lif,
            input_scale=hp["input_scale"],
            spiking_readout=bool(hp["spiking_readout"]))
    elif tag == ConvSpikingNet.arch_tag:
        net = ConvSpikingNet(
            n_pairs=int(hp["n_pairs"]), n_delays=int(hp["n_delays"]),
            n_channels=int(hp["n_channels"]), n_out=int(hp["n_out"]), lif=lif,
            readout_lif=readout_lif,
            steps=int(hp["steps"]), count_norm=hp["count_norm"],
            fc_units=int(hp["fc_units"]),
            spiking_readout=bool(hp["spiking_readout"]))
    else:
        raise ValueError(f"{path}: unknown architecture tag {tag!r}")
    state = {k: torch.from_numpy(v) for k, v in weights.items()}
    missing = set(dict(net.named_parameters())) - set(state)
    if missing:
        raise ValueError(f"{path}: checkpoint missing tensors {sorted(missing)}")
    net.load_state_dict(state, strict=True)
    return net
