"""On-disk frame codec, seed mixing, and the external-worker wire protocol.

Frame-block files ("ATSB"):

    offset  size  field
    0       4     magic "ATSB"
    4       4     version, u32 = 1
    8       4     frame count, u32
    12      4     channels, u32
    16      4     height, u32
    20      4     width, u32
    24      4     dtype, u32 (0 = float32 little-endian)
    28      4     reserved, u32 = 0
    32      ...   payload, frame -> channel -> row -> column order

All integers little-endian. The header does not carry the block's start
frame; callers that need absolute placement pass it out of band (the wire
protocol carries it in the request/response JSON).

Seed mixing (mix_seed) is FNV-1a over the label bytes, seeded with the root
seed, followed by the splitmix64 finalizer:

    h = root_seed
    for each byte b: h = (h XOR b) * 0x100000001B3   (mod 2^64)
    h = finalize(h)   with finalize as documented in rng.py

Wire protocol: newline-delimited JSON over the worker's stdin/stdout.
Requests: {"id", "op": "capabilities" | "generate", "kind",
"interval": [s, e], "anchors": [{"time", "width", "path"}...],
"conditioning": {"path", "start", "end"}, "interior": [t...], "seed",
"params": {...}}. Responses: {"id", "status": "ok" | "error",
"anchors": [...], "output_path", "message"}. Frame payloads travel as ATSB
files referenced by path. Requests may be pipelined; responses may arrive
out of order and are matched by id. A malformed request line yields an
error response with id null.

For inpaint_seam requests the anchors list carries three entries: the two
outer brackets first, then the anchor under repair.
"""

from __future__ import annotations

import json
import os
import struct
import subprocess
import threading
import uuid
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .backend import Backend, BackendContract
from .core import (
    Anchor,
    BackendError,
    CallResult,
    CallSpec,
    CodecError,
    ConditioningTrack,
    FrameBlock,
    Interval,
    ProtocolError,
)
from .rng import MASK64, finalize64

ATSB_MAGIC = b"ATSB"
ATSB_VERSION = 1
ATSB_DTYPE_F32LE = 0
_HEADER = struct.Struct("<4s7I")
HEADER_SIZE = _HEADER.size  # 32

_FNV_PRIME = 0x100000001B3
_U32_MAX = 2**32 - 1


def encode_frame_block(block: FrameBlock) -> bytes:
    """Serialize a frame block to ATSB bytes."""
    dims = (block.interval.length, block.channels, block.height, block.width)
    if any(d > _U32_MAX for d in dims):
        raise CodecError(f"dimension overflow: {dims}")
    header = _HEADER.pack(ATSB_MAGIC, ATSB_VERSION, *dims, ATSB_DTYPE_F32LE, 0)
    samples = np.ascontiguousarray(block.samples, dtype="<f4")
    return header + samples.tobytes()


def decode_frame_block(data: bytes, start: int = 1) -> FrameBlock:
    """Deserialize ATSB bytes; start places the block on the frame axis."""
    if len(data) < HEADER_SIZE:
        raise CodecError(f"truncated header: {len(data)} bytes")
    magic, version, frames, channels, height, width, dtype, reserved = _HEADER.unpack_from(data)
    if magic != ATSB_MAGIC:
        raise CodecError(f"bad magic {magic!r}")
    if version != ATSB_VERSION:
        raise CodecError(f"unsupported version {version}")
    if dtype != ATSB_DTYPE_F32LE:
        raise CodecError(f"unsupported dtype code {dtype}")
    if reserved != 0:
        raise CodecError(f"nonzero reserved field {reserved}")
    count = frames * channels * height * width
    expected = HEADER_SIZE + 4 * count
    if len(data) != expected:
        raise CodecError(f"payload size {len(data)} != expected {expected}")
    samples = np.frombuffer(data, dtype="<f4", offset=HEADER_SIZE).reshape(
        frames, channels, height, width
    )
    return FrameBlock(
        interval=Interval(start, start + frames - 1),
        channels=channels,
        height=height,
        width=width,
        samples=samples.astype(np.float32, copy=True),
    )


def write_frame_block(path: str | Path, block: FrameBlock) -> None:
    Path(path).write_bytes(encode_frame_block(block))


def read_frame_block(path: str | Path, start: int = 1) -> FrameBlock:
    return decode_frame_block(Path(path).read_bytes(), start=start)


def mix_seed(root_seed: int, label: bytes | str) -> int:
    """Mix a 64-bit seed with a label; stable across platforms and languages."""
    if isinstance(label, str):
        label = label.encode("utf-8")
    h = root_seed & MASK64
    prime, mask = _FNV_PRIME, MASK64
    for b in label:
        h = ((h ^ b) * prime) & mask
    return finalize64(h)


def mix_seed_many(root_seed: int, labels: Sequence[str]) -> list[int]:
    """Batch mix_seed over many labels; bit-identical to the scalar path."""
    if not labels:
        return []
    encoded = [label.encode("utf-8") for label in labels]
    n = len(encoded)
    width = max(len(e) for e in encoded)
    data = np.zeros((n, width), dtype=np.uint64)
    lengths = np.empty(n, dtype=np.int64)
    for i, e in enumerate(encoded):
        lengths[i] = len(e)
        data[i, : len(e)] = np.frombuffer(e, dtype=np.uint8)
    h = np.full(n, root_seed & MASK64, dtype=np.uint64)
    prime = np.uint64(_FNV_PRIME)
    for j in range(width):
        active = lengths > j
        h[active] = (h[active] ^ data[active, j]) * prime
    h = h ^ (h >> np.uint64(30))
    h = h * np.uint64(0xBF58476D1CE4E5B9)
    h = h ^ (h >> np.uint64(27))
    h = h * np.uint64(0x94D049BB133111EB)
    h = h ^ (h >> np.uint64(31))
    return [int(x) for x in h]


def conditioning_to_block(track: ConditioningTrack) -> FrameBlock:
    """Pack a conditioning track as an ATSB block (frames x channels x 1 x 1)."""
    samples = track.data.astype(np.float32).reshape(track.horizon, track.channels, 1, 1)
    return FrameBlock(
        interval=Interval(track.start, track.start + track.horizon - 1),
        channels=track.channels,
        height=1,
        width=1,
        samples=samples,
    )


def block_to_conditioning(block: FrameBlock) -> ConditioningTrack:
    data = block.samples.reshape(block.interval.length, block.channels).astype(np.float64)
    return ConditioningTrack(
        horizon=block.interval.length,
        channels=block.channels,
        data=data,
        start=block.interval.start,
    )


@dataclass
class WorkerResponse:
    id: str | None
    status: str
    anchors: list[dict]
    output_path: str | None
    message: str | None
    capabilities: dict | None

    @classmethod
    def from_json(cls, obj: dict) -> "WorkerResponse":
        return cls(
            id=obj.get("id"),
            status=obj.get("status", "error"),
            anchors=obj.get("anchors") or [],
            output_path=obj.get("output_path"),
            message=obj.get("message"),
            capabilities=obj.get("capabilities"),
        )


class WorkerClient:
    """Spawns a worker process and matches pipelined responses by id."""

    def __init__(self, command: Sequence[str], timeout: float = 60.0) -> None:
        self.timeout = timeout
        self._proc = subprocess.Popen(
            list(command),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            text=True,
            bufsize=1,
        )
        self._lock = threading.Lock()
        self._pending: dict[str, threading.Event] = {}
        self._results: dict[str, WorkerResponse] = {}
        self._dead: str | None = None
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def _read_loop(self) -> None:
        assert self._proc.stdout is not None
        for line in self._proc.stdout:
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError:
                continue
            resp = WorkerResponse.from_json(obj)
            with self._lock:
                if resp.id is not None and resp.id in self._pending:
                    self._results[resp.id] = resp
                    self._pending[resp.id].set()
        with self._lock:
            self._dead = "worker closed its output stream"
            for ev in self._pending.values():
                ev.set()

    def submit(self, request: dict) -> str:
        req_id = request["id"]
        ev = threading.Event()
        with self._lock:
            if self._dead is not None:
                raise ProtocolError(self._dead)
            self._pending[req_id] = ev
        assert self._proc.stdin is not None
        try:
            self._proc.stdin.write(json.dumps(request) + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, ValueError) as exc:
            raise ProtocolError(f"worker stdin closed: {exc}") from exc
        return req_id

    def wait(self, req_id: str) -> WorkerResponse:
        with self._lock:
            ev = self._pending.get(req_id)
        if ev is None:
            raise ProtocolError(f"unknown request id {req_id}")
        if not ev.wait(self.timeout):
            raise ProtocolError(f"worker timed out on request {req_id}")
        with self._lock:
            self._pending.pop(req_id, None)
            resp = self._results.pop(req_id, None)
        if resp is None:
            raise ProtocolError(self._dead or f"no response for request {req_id}")
        return resp

    def request(self, request: dict) -> WorkerResponse:
        return self.wait(self.submit(request))

    def close(self) -> None:
        try:
            if self._proc.stdin is not None:
                self._proc.stdin.close()
        except OSError:
            pass
        try:
            self._proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self._proc.kill()
            self._proc.wait(timeout=5)

    def __enter__(self) -> "WorkerClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


class WorkerBackend:
    """Backend adapter that dispatches calls to an external worker.

    Payloads are exchanged as ATSB files in a shared scratch directory; the
    control channel stays small.
    """

    def __init__(
        self,
        command: Sequence[str],
        workdir: str | Path,
        world_params: dict | None = None,
        timeout: float = 60.0,
    ) -> None:
        self.workdir = Path(workdir)
        self.workdir.mkdir(parents=True, exist_ok=True)
        self.client = WorkerClient(command, timeout=timeout)
        self.world_params = world_params or {}
        self._caps: BackendContract | None = None
        self._sem: threading.Semaphore | None = None

    def close(self) -> None:
        self.client.close()

    def __enter__(self) -> "WorkerBackend":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def capabilities(self) -> BackendContract:
        if self._caps is None:
            resp = self.client.request({"id": uuid.uuid4().hex, "op": "capabilities"})
            if resp.status != "ok" or resp.capabilities is None:
                raise ProtocolError(f"capabilities failed: {resp.message}")
            c = resp.capabilities
            self._caps = BackendContract(
                max_interval=int(c["max_interval"]),
                supports_root=bool(c.get("supports_root", False)),
                supports_refine=bool(c.get("supports_refine", False)),
                supports_leaf=bool(c.get("supports_leaf", False)),
                supports_inpaint=bool(c.get("supports_inpaint", False)),
                max_concurrency=c.get("max_concurrency"),
            )
            limit = self._caps.max_concurrency
            self._sem = threading.Semaphore(limit) if limit else None
        return self._caps

    def _write_anchor(self, req_id: str, tag: str, anchor: Anchor) -> dict:
        path = self.workdir / f"req-{req_id}-{tag}.atsb"
        write_frame_block(path, anchor.payload)
        return {"time": anchor.time, "width": anchor.width, "path": str(path)}

    def run_call(
        self,
        spec: CallSpec,
        brackets: Sequence[Anchor],
        conditioning: ConditioningTrack,
        context_anchor: Anchor | None = None,
    ) -> CallResult:
        self.capabilities()
        req_id = uuid.uuid4().hex
        cond_slice = conditioning.slice(spec.conditioning_slice)
        cond_path = self.workdir / f"req-{req_id}-cond.atsb"
        write_frame_block(cond_path, conditioning_to_block(cond_slice))
        anchors = [self._write_anchor(req_id, f"a{i}", a) for i, a in enumerate(brackets)]
        if context_anchor is not None:
            anchors.append(self._write_anchor(req_id, "ctx", context_anchor))
        request = {
            "id": req_id,
            "op": "generate",
            "kind": spec.kind,
            "interval": list(spec.interval.as_tuple()),
            "anchors": anchors,
            "conditioning": {
                "path": str(cond_path),
                "start": cond_slice.start,
                "end": cond_slice.start + cond_slice.horizon - 1,
            },
            "interior": list(spec.interior_times),
            "seed": spec.seed,
            "params": {"world": self.world_params, "level": spec.level, "call_id": spec.call_id},
        }
        if self._sem is not None:
            with self._sem:
                resp = self.client.request(request)
        else:
            resp = self.client.request(request)
        if resp.status != "ok":
            raise BackendError(f"worker error: {resp.message}", spec.call_id)
        if spec.kind in ("root", "refine"):
            out = []
            for entry in resp.anchors:
                width = int(entry["width"])
                time = int(entry["time"])
                block = read_frame_block(entry["path"], start=max(1, time - width // 2))
                out.append(Anchor(time=time, width=width, level=spec.level, payload=block))
            return CallResult(call_id=spec.call_id, anchors=tuple(out))
        if resp.output_path is None:
            raise BackendError("worker returned no output path", spec.call_id)
        frames = read_frame_block(resp.output_path, start=spec.interval.start)
        return CallResult(call_id=spec.call_id, frames=frames)
