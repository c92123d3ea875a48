"""Loopback worker: serves the wire protocol over stdio with the synthetic
backend. Run as `python -m ats.worker [--dir SCRATCH]`.

Reads newline-delimited JSON requests on stdin, answers one response per
request on stdout in completion order. Frame payloads are exchanged as ATSB
files under the scratch directory. Stateless between requests.
"""

from __future__ import annotations

import argparse
import json
import sys
import tempfile
from pathlib import Path

from .backend import (
    Backend,
    BackendContract,
    SyntheticBackend,
    SyntheticWorldConfig,
)
from .core import Anchor, AtsError, CallSpec, Interval
from .protocol import (
    block_to_conditioning,
    read_frame_block,
    write_frame_block,
)

CAPABILITIES = BackendContract(max_interval=2**31 - 1, max_concurrency=4)


def _capabilities_response(req_id: str) -> dict:
    c = CAPABILITIES
    return {
        "id": req_id,
        "status": "ok",
        "capabilities": {
            "max_interval": c.max_interval,
            "supports_root": c.supports_root,
            "supports_refine": c.supports_refine,
            "supports_leaf": c.supports_leaf,
            "supports_inpaint": c.supports_inpaint,
            "max_concurrency": c.max_concurrency,
        },
    }


def _load_anchor(entry: dict, level: int) -> Anchor:
    width = int(entry["width"])
    time = int(entry["time"])
    payload = read_frame_block(entry["path"], start=max(1, time - width // 2))
    return Anchor(time=time, width=width, level=level, payload=payload)


def handle_generate(request: dict, scratch: Path) -> dict:
    req_id = request["id"]
    kind = request.get("kind")
    if kind not in ("root", "refine", "leaf", "inpaint_seam"):
        return {"id": req_id, "status": "error", "message": f"unsupported kind {kind!r}"}
    params = request.get("params") or {}
    world = SyntheticWorldConfig.from_dict(params.get("world") or {})
    level = int(params.get("level", 0))
    interval = Interval(*request["interval"])
    cond_info = request["conditioning"]
    cond = block_to_conditioning(
        read_frame_block(cond_info["path"], start=int(cond_info["start"]))
    )
    spec = CallSpec(
        call_id=str(params.get("call_id", req_id)),
        kind=kind,
        level=level,
        interval=interval,
        bracket_times=tuple(int(a["time"]) for a in (request.get("anchors") or [])[:2])
        if kind != "root"
        else (),
        interior_times=tuple(int(t) for t in request.get("interior") or ()),
        conditioning_slice=Interval(int(cond_info["start"]), int(cond_info["end"])),
        seed=int(request.get("seed", 0)),
    )
    entries = request.get("anchors") or []
    anchors = [_load_anchor(e, level) for e in entries]
    brackets = tuple(anchors[:2]) if kind != "root" else ()
    context = anchors[2] if kind == "inpaint_seam" and len(anchors) > 2 else None

    backend = SyntheticBackend(world, anchor_width=int(params.get("anchor_width", 1)))
    result = backend.run_call(spec, brackets, cond, context_anchor=context)
    if result.frames is not None:
        out_path = scratch / f"resp-{req_id}-out.atsb"
        write_frame_block(out_path, result.frames)
        return {"id": req_id, "status": "ok", "output_path": str(out_path)}
    out = []
    for anchor in result.anchors:
        path = scratch / f"resp-{req_id}-anchor-{anchor.time}.atsb"
        write_frame_block(path, anchor.payload)
        out.append({"time": anchor.time, "width": anchor.width, "path": str(path)})
    return {"id": req_id, "status": "ok", "anchors": out}


def handle_line(line: str, scratch: Path) -> dict:
    try:
        request = json.loads(line)
        if not isinstance(request, dict) or "id" not in request:
            raise ValueError("not a request object")
    except ValueError:
        return {"id": None, "status": "error", "message": "malformed request line"}
    op = request.get("op")
    if op == "capabilities":
        return _capabilities_response(request["id"])
    if op == "generate":
        try:
            return handle_generate(request, scratch)
        except (AtsError, KeyError, TypeError, ValueError, OSError) as exc:
            return {"id": request["id"], "status": "error", "message": f"{type(exc).__name__}: {exc}"}
    return {"id": request.get("id"), "status": "error", "message": "unsupported"}


def serve(stdin=None, stdout=None, scratch: Path | None = None) -> None:
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    if scratch is None:
        scratch = Path(tempfile.mkdtemp(prefix="ats-worker-"))
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        response = handle_line(line, scratch)
        stdout.write(json.dumps(response) + "\n")
        stdout.flush()


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="ats-worker", description=__doc__)
    parser.add_argument("--dir", type=Path, default=None, help="scratch directory for payload files")
    args = parser.parse_args(argv)
    scratch = args.dir
    if scratch is not None:
        scratch.mkdir(parents=True, exist_ok=True)
    serve(scratch=scratch)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
