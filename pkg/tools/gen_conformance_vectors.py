#!/usr/bin/env python3
"""Regenerate vectors/conformance_vectors.json.

The vectors freeze the noise-free wire behavior: for each request the file
stores every input payload and the exact ATSB bytes a conforming worker
must produce. They are generated once through the stdio worker and then
committed; external workers are tested against the frozen bytes.
"""

from __future__ import annotations

import json
import math
import sys
import tempfile
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

import numpy as np

from ats.backend import FRAME_CHANNELS, IDENTITY_CHANNEL, STRUCT_CHANNEL, SyntheticWorldConfig
from ats.core import Anchor, ConditioningTrack, FrameBlock, Interval
from ats.protocol import WorkerClient, conditioning_to_block, encode_frame_block

WORLD = SyntheticWorldConfig(
    sigma_step=0.0,
    sigma_jump=0.0,
    sigma_leaf=0.0,
    sigma_root_shared=0.0,
    sigma_root_anchor=0.0,
    sigma_struct=0.0,
)


def sin_track(start: int, end: int) -> ConditioningTrack:
    t = np.arange(start, end + 1, dtype=np.float64)
    data = np.sin(2.0 * math.pi * t / WORLD.period_p).reshape(-1, 1)
    return ConditioningTrack(horizon=end - start + 1, channels=1, data=data, start=start)


def keyframe_anchor(time: int, identity: float, structure: float) -> Anchor:
    samples = np.empty((1, FRAME_CHANNELS, 1, 1), dtype=np.float32)
    samples[0, STRUCT_CHANNEL, 0, 0] = structure
    samples[0, IDENTITY_CHANNEL, 0, 0] = identity
    block = FrameBlock(interval=Interval(time, time), channels=FRAME_CHANNELS, height=1, width=1, samples=samples)
    return Anchor(time=time, width=1, level=0, payload=block)


def case_inputs():
    c = lambda t: math.sin(2.0 * math.pi * t / WORLD.period_p)  # noqa: E731
    yield {
        "name": "leaf-flat-zero",
        "kind": "leaf",
        "interval": (11, 91),
        "interior": (),
        "seed": 101,
        "anchors": [keyframe_anchor(10, 0.0, c(10)), keyframe_anchor(92, 0.0, c(92))],
        "conditioning": sin_track(11, 91),
    }
    yield {
        "name": "leaf-ramp",
        "kind": "leaf",
        "interval": (11, 91),
        "interior": (),
        "seed": 12345,
        "anchors": [keyframe_anchor(10, 0.25, c(10)), keyframe_anchor(92, 0.875, c(92))],
        "conditioning": sin_track(11, 91),
    }
    yield {
        "name": "root-three-anchors",
        "kind": "root",
        "interval": (1, 161),
        "interior": (1, 81, 161),
        "seed": 77,
        "anchors": [],
        "conditioning": sin_track(1, 161),
    }
    yield {
        "name": "refine-two-inserts",
        "kind": "refine",
        "interval": (1, 161),
        "interior": (55, 108),
        "seed": 9000,
        "anchors": [keyframe_anchor(1, -0.5, c(1)), keyframe_anchor(161, 1.0, c(161))],
        "conditioning": sin_track(1, 161),
    }
    yield {
        "name": "inpaint-around-anchor",
        "kind": "inpaint_seam",
        "interval": (21, 59),
        "interior": (),
        "seed": 4242,
        "anchors": [
            keyframe_anchor(20, 0.0625, c(20)),
            keyframe_anchor(60, -0.125, c(60)),
            keyframe_anchor(40, 0.75, c(40)),  # anchor under repair
        ],
        "conditioning": sin_track(21, 59),
    }


def main() -> int:
    scratch = Path(tempfile.mkdtemp(prefix="ats-vectors-"))
    client = WorkerClient([sys.executable, "-m", "ats.worker", "--dir", str(scratch)])
    cases = []
    try:
        for idx, case in enumerate(case_inputs()):
            req_id = f"vec-{idx}"
            anchor_entries = []
            anchor_docs = []
            for k, anchor in enumerate(case["anchors"]):
                path = scratch / f"{req_id}-in-{k}.atsb"
                data = encode_frame_block(anchor.payload)
                path.write_bytes(data)
                anchor_entries.append({"time": anchor.time, "width": anchor.width, "path": str(path)})
                anchor_docs.append({"time": anchor.time, "width": anchor.width, "atsb_hex": data.hex()})
            cond = case["conditioning"]
            cond_bytes = encode_frame_block(conditioning_to_block(cond))
            cond_path = scratch / f"{req_id}-cond.atsb"
            cond_path.write_bytes(cond_bytes)
            request = {
                "id": req_id,
                "op": "generate",
                "kind": case["kind"],
                "interval": list(case["interval"]),
                "anchors": anchor_entries,
                "conditioning": {
                    "path": str(cond_path),
                    "start": cond.start,
                    "end": cond.start + cond.horizon - 1,
                },
                "interior": list(case["interior"]),
                "seed": case["seed"],
                "params": {"world": WORLD.to_dict(), "level": 1, "call_id": case["name"]},
            }
            resp = client.request(request)
            assert resp.status == "ok", (case["name"], resp.message)
            if resp.output_path:
                expect = {"output_atsb_hex": Path(resp.output_path).read_bytes().hex()}
            else:
                expect = {
                    "anchors": [
                        {
                            "time": entry["time"],
                            "width": entry["width"],
                            "atsb_hex": Path(entry["path"]).read_bytes().hex(),
                        }
                        for entry in resp.anchors
                    ]
                }
            cases.append(
                {
                    "name": case["name"],
                    "kind": case["kind"],
                    "interval": list(case["interval"]),
                    "interior": list(case["interior"]),
                    "seed": case["seed"],
                    "anchors": anchor_docs,
                    "conditioning": {
                        "start": cond.start,
                        "end": cond.start + cond.horizon - 1,
                        "atsb_hex": cond_bytes.hex(),
                    },
                    "expect": expect,
                }
            )
    finally:
        client.close()
    doc = {"version": 1, "world": WORLD.to_dict(), "cases": cases}
    out = Path(__file__).resolve().parent.parent / "vectors" / "conformance_vectors.json"
    out.write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
    print(f"wrote {out} with {len(cases)} cases")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
