"""Binary model checkpoints.

Layout (all integers little-endian):
  magic "SPRC", version u32,
  architecture block (input channels, kernel, blocks per layer, depth,
  per-layer widths, projection flag, alpha f64),
  task count u32, then per task: class count u32 + frozen u8,
  then named tensor records: name length u32, utf-8 name, rank u32,
  dims u32 each, raw float32 values.

Round trips are bit-exact: running moments and frozen flags are part of
the record set, so a reloaded model reproduces eval-mode outputs bit for
bit.
"""

from __future__ import annotations

import io
import struct
from typing import Iterator, Tuple

import numpy as np

from .errors import FormatError
from .model import Architecture, SparcModel, WorkingMemory
from .rng import substream

MAGIC = b"SPRC"
VERSION = 1


def _task_tensors(wm: WorkingMemory) -> Iterator[Tuple[str, np.ndarray]]:
    yield "stem/depthwise", wm.stem.depthwise.data
    yield "stem/pointwise", wm.stem.taskwise_pointwise.data
    yield "stem_bn/gamma", wm.stem_bn.gamma.data
    yield "stem_bn/beta", wm.stem_bn.beta.data
    yield "stem_bn/running_mean", wm.stem_bn.running_mean
    yield "stem_bn/running_var", wm.stem_bn.running_var
    for b, block in enumerate(wm.blocks):
        for u, (unit, bn) in enumerate(((block.unit1, block.bn1), (block.unit2, block.bn2)), 1):
            yield f"block{b}/unit{u}/depthwise", unit.depthwise.data
            yield f"block{b}/unit{u}/pointwise", unit.taskwise_pointwise.data
            yield f"block{b}/bn{u}/gamma", bn.gamma.data
            yield f"block{b}/bn{u}/beta", bn.beta.data
            yield f"block{b}/bn{u}/running_mean", bn.running_mean
            yield f"block{b}/bn{u}/running_var", bn.running_var
        if block.skip_projection is not None:
            yield f"block{b}/projection", block.skip_projection.data
    yield "head/weight", wm.head.weight.data
    yield "head/bias", wm.head.bias.data


def named_tensors(model: SparcModel) -> Iterator[Tuple[str, np.ndarray]]:
    for i, bank in enumerate(model.semantic.banks):
        yield f"semantic/bank{i}", bank.data
    for t, wm in enumerate(model.working):
        for suffix, arr in _task_tensors(wm):
            yield f"task{t}/{suffix}", arr


def _write_record(out: io.BufferedIOBase, name: str, arr: np.ndarray) -> None:
    encoded = name.encode("utf-8")
    out.write(struct.pack("<I", len(encoded)))
    out.write(encoded)
    out.write(struct.pack("<I", arr.ndim))
    out.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    out.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def task_state_bytes(model: SparcModel, task_id: int) -> bytes:
    """Serialized records of one task's parameters and running moments."""
    wm = model.working[task_id]
    buf = io.BytesIO()
    for suffix, arr in _task_tensors(wm):
        _write_record(buf, suffix, arr)
    return buf.getvalue()


def model_bytes(model: SparcModel) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    arch = model.arch
    buf.write(struct.pack("<I", VERSION))
    buf.write(struct.pack("<III", arch.input_channels, arch.kernel, arch.blocks_per_layer))
    buf.write(struct.pack("<I", arch.depth))
    buf.write(struct.pack(f"<{arch.depth}I", *arch.filters))
    buf.write(struct.pack("<B", 1 if arch.projection_skips else 0))
    buf.write(struct.pack("<d", model.semantic.alpha))
    buf.write(struct.pack("<I", model.num_tasks))
    for classes, wm in zip(model.classes_per_task, model.working):
        buf.write(struct.pack("<IB", classes, 1 if wm.frozen else 0))
    for name, arr in named_tensors(model):
        _write_record(buf, name, arr)
    return buf.getvalue()


def save_model(model: SparcModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(model_bytes(model))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, n: int) -> bytes:
        if self.offset + n > len(self.data):
            raise FormatError(
                f"truncated checkpoint: wanted {n} bytes, {len(self.data) - self.offset} left",
                offset=self.offset,
            )
        chunk = self.data[self.offset : self.offset + n]
        self.offset += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    @property
    def exhausted(self) -> bool:
        return self.offset >= len(self.data)


def _read_records(reader: _Reader) -> dict:
    records = {}
    while not reader.exhausted:
        at = reader.offset
        (name_len,) = reader.unpack("<I")
        if name_len > 4096:
            raise FormatError(f"implausible record name length {name_len}", offset=at)
        name = reader.take(name_len).decode("utf-8")
        (rank,) = reader.unpack("<I")
        if rank > 8:
            raise FormatError(f"implausible tensor rank {rank}", offset=at)
        dims = reader.unpack(f"<{rank}I")
        count = int(np.prod(dims, dtype=np.int64)) if rank else 1
        raw = reader.take(4 * count)
        records[name] = np.frombuffer(raw, dtype="<f4").reshape(dims).copy()
    return records


def load_model(path) -> SparcModel:
    with open(path, "rb") as fh:
        data = fh.read()
    reader = _Reader(data)
    if reader.take(4) != MAGIC:
        raise FormatError("bad magic; not a model checkpoint", offset=0)
    (version,) = reader.unpack("<I")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", offset=4)
    input_channels, kernel, blocks_per_layer = reader.unpack("<III")
    (depth,) = reader.unpack("<I")
    if depth == 0 or depth > 64:
        raise FormatError(f"implausible depth {depth}", offset=reader.offset - 4)
    filters = reader.unpack(f"<{depth}I")
    (projection_flag,) = reader.unpack("<B")
    (alpha,) = reader.unpack("<d")
    (num_tasks,) = reader.unpack("<I")
    tasks = [reader.unpack("<IB") for _ in range(num_tasks)]

    arch = Architecture(
        input_channels=input_channels,
        filters=tuple(int(f) for f in filters),
        kernel=kernel,
        blocks_per_layer=blocks_per_layer,
        projection_skips=bool(projection_flag),
    )
    records = _read_records(reader)

    model = SparcModel(arch, alpha)
    if num_tasks:
        model.semantic.initialize(arch, substream(0, "semantic"))
    offset = 0
    for t, (classes, frozen) in enumerate(tasks):
        wm = WorkingMemory.create(arch, int(classes), offset, substream(0, "task"))
        model.working.append(wm)
        model.classes_per_task.append(int(classes))
        offset += int(classes)

    def fetch(name: str, expected_shape) -> np.ndarray:
        if name not in records:
            raise FormatError(f"missing tensor record '{name}'")
        arr = records.pop(name)
        if arr.shape != tuple(expected_shape):
            raise FormatError(
                f"tensor '{name}' has shape {arr.shape}, expected {tuple(expected_shape)}"
            )
        return arr

    for i, bank in enumerate(model.semantic.banks):
        bank.data = fetch(f"semantic/bank{i}", bank.data.shape)
    for t, wm in enumerate(model.working):
        for suffix, arr in list(_task_tensors(wm)):
            loaded = fetch(f"task{t}/{suffix}", arr.shape)
            arr[...] = loaded
    if records:
        raise FormatError(f"unexpected tensor records: {sorted(records)[:3]}")

    for t, ((_classes, frozen), wm) in enumerate(zip(tasks, model.working)):
        if frozen:
            model.freeze_task(t)
    return model
