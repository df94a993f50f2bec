"""Binary matrix files and training checkpoints.

A matrix file is one ASCII line ``rows=<r> cols=<c>`` followed by ``r*c``
little-endian float32 values in row-major order, the same layout as the
bundle's feature file. A checkpoint is a directory holding ``manifest.txt``
(one ``key=value`` line: arch, d, L, epoch, seed) and one matrix file per
parameter.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .encoders import Arch, EncoderWeights


class FormatError(ValueError):
    pass


def save_matrix(M: np.ndarray, path) -> None:
    M = np.asarray(M)
    if M.ndim == 1:
        M = M[None, :]
    with open(path, "wb") as fh:
        fh.write(f"rows={M.shape[0]} cols={M.shape[1]}\n".encode())
        fh.write(np.ascontiguousarray(M, dtype="<f4").tobytes())


def load_matrix(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"missing matrix file: {path}")
    raw = path.read_bytes()
    head, sep, body = raw.partition(b"\n")
    if not sep:
        raise FormatError(f"{path}: missing header line")
    try:
        fields = dict(kv.split("=") for kv in head.decode().split())
        rows, cols = int(fields["rows"]), int(fields["cols"])
    except (ValueError, KeyError, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: bad header {head!r}") from exc
    if len(body) != 4 * rows * cols:
        raise FormatError(f"{path}: expected {rows * cols} floats, found {len(body) / 4:g}")
    return np.frombuffer(body, dtype="<f4").astype(np.float64).reshape(rows, cols)


@dataclass
class Checkpoint:
    arch: Arch
    weights: EncoderWeights
    head: np.ndarray | None
    d: int
    L: int
    epoch: int
    seed: int


def save_checkpoint(ck: Checkpoint, path) -> None:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    (root / "manifest.txt").write_text(
        f"arch={ck.arch.value} d={ck.d} L={ck.L} epoch={ck.epoch} seed={ck.seed}\n"
    )
    for i, W in enumerate(ck.weights.layers):
        save_matrix(W, root / f"layer_{i}.bin")
    if ck.weights.beta_src is not None:
        for i, (bs, bd) in enumerate(zip(ck.weights.beta_src, ck.weights.beta_dst)):
            save_matrix(bs, root / f"beta_src_{i}.bin")
            save_matrix(bd, root / f"beta_dst_{i}.bin")
    if ck.head is not None:
        save_matrix(ck.head, root / "head.bin")


def load_checkpoint(path) -> Checkpoint:
    root = Path(path)
    manifest = root / "manifest.txt"
    if not manifest.is_file():
        raise FileNotFoundError(f"missing checkpoint manifest: {manifest}")
    try:
        meta = dict(kv.split("=") for kv in manifest.read_text().split())
        arch = Arch.parse(meta["arch"])
        d, L, epoch, seed = (int(meta[k]) for k in ("d", "L", "epoch", "seed"))
    except (ValueError, KeyError) as exc:
        raise FormatError(f"{manifest}: malformed manifest") from exc
    count = 1 if arch is Arch.LINEAR else L
    layers = [load_matrix(root / f"layer_{i}.bin") for i in range(count)]
    beta_src = beta_dst = None
    if arch is Arch.GAT:
        beta_src = [load_matrix(root / f"beta_src_{i}.bin").ravel() for i in range(L)]
        beta_dst = [load_matrix(root / f"beta_dst_{i}.bin").ravel() for i in range(L)]
    head_path = root / "head.bin"
    head = load_matrix(head_path) if head_path.is_file() else None
    depth = L if arch is Arch.LINEAR else None
    return Checkpoint(arch, EncoderWeights(layers, beta_src, beta_dst, depth), head, d, L, epoch, seed)
