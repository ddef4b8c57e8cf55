"""Binary and CSV serialization of simulation records.

Layout (little-endian):
    magic   4 bytes  b"RCSR"
    version u16
    hlen    u32      length of the UTF-8 JSON header
    header  hlen bytes: config snapshot, seed, substeps_per_cycle,
                        delay_substeps, warmup_cycles, n_stages, n_cycles,
                        has_states
    bits    N * ceil(n_cycles/8) bytes, channel-major, one bit per sample
            ({-1,+1} -> {0,1}, MSB-first within a byte)
    states  (present when has_states) n_cycles*N f64 C-order edge samples,
            then N f64 per-stage max |v_x| over substeps
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .simulator import SimRecord

MAGIC = b"RCSR"
VERSION = 1


def write_record(record: SimRecord, path: str | Path) -> None:
    header = {
        "config": record.config,
        "seed": record.seed,
        "substeps_per_cycle": record.substeps_per_cycle,
        "delay_substeps": record.delay_substeps,
        "warmup_cycles": record.warmup_cycles,
        "n_stages": record.n_stages,
        "n_cycles": record.n_cycles,
        "has_states": record.state_samples is not None,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    chunks = [MAGIC, struct.pack("<H", VERSION), struct.pack("<I", len(blob)), blob]
    ones = ((record.bits + 1) // 2).astype(np.uint8)
    for ch in range(record.n_stages):
        chunks.append(np.packbits(ones[ch]).tobytes())
    if record.state_samples is not None:
        chunks.append(np.ascontiguousarray(record.state_samples, dtype="<f8").tobytes())
        chunks.append(np.ascontiguousarray(record.state_max_abs, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def read_record(path: str | Path) -> SimRecord:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: not a simulation record (bad magic)")
    version = struct.unpack_from("<H", raw, 4)[0]
    if version != VERSION:
        raise ValueError(f"{path}: unsupported record version {version}")
    hlen = struct.unpack_from("<I", raw, 6)[0]
    pos = 10
    header = json.loads(raw[pos : pos + hlen].decode("utf-8"))
    pos += hlen

    n = header["n_stages"]
    k = header["n_cycles"]
    bytes_per_channel = (k + 7) // 8
    bits = np.empty((n, k), dtype=np.int8)
    for ch in range(n):
        packed = np.frombuffer(raw, dtype=np.uint8, count=bytes_per_channel, offset=pos)
        pos += bytes_per_channel
        bits[ch] = np.unpackbits(packed, count=k).astype(np.int8) * 2 - 1

    state_samples = None
    state_max_abs = np.zeros(n)
    if header["has_states"]:
        count = k * n
        state_samples = (
            np.frombuffer(raw, dtype="<f8", count=count, offset=pos).reshape(k, n).copy()
        )
        pos += count * 8
        state_max_abs = np.frombuffer(raw, dtype="<f8", count=n, offset=pos).copy()
        pos += n * 8

    return SimRecord(
        bits=bits,
        state_samples=state_samples,
        state_max_abs=state_max_abs,
        config=header["config"],
        seed=header["seed"],
        substeps_per_cycle=header["substeps_per_cycle"],
        delay_substeps=header["delay_substeps"],
        warmup_cycles=header["warmup_cycles"],
    )


def bits_to_csv(record: SimRecord, path: str | Path) -> None:
    """One row per cycle: cycle index then s_1..s_N."""
    lines = ["cycle," + ",".join(f"s_{ch + 1}" for ch in range(record.n_stages))]
    for k in range(record.n_cycles):
        lines.append(f"{k}," + ",".join(str(int(b)) for b in record.bits[:, k]))
    Path(path).write_text("\n".join(lines) + "\n")


def states_to_csv(record: SimRecord, path: str | Path) -> None:
    """One row per cycle: cycle index then v_x1..v_xN at the clock edge."""
    if record.state_samples is None:
        raise ValueError("record carries no state samples")
    lines = ["cycle," + ",".join(f"v_x{ch + 1}" for ch in range(record.n_stages))]
    for k in range(record.n_cycles):
        row = ",".join(repr(float(v)) for v in record.state_samples[k])
        lines.append(f"{k},{row}")
    Path(path).write_text("\n".join(lines) + "\n")
