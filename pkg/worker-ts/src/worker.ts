#!/usr/bin/env node
/**
 * Reference stdio worker for the ats wire protocol.
 *
 * Reads newline-delimited JSON requests on stdin and answers one response
 * per request on stdout. Frame payloads are exchanged as ATSB files under
 * the scratch directory (--dir, defaults to a fresh temp dir). Implements
 * the noise-free synthetic model only; requests with nonzero generation
 * sigmas get an error response. Stateless per request; requests may be
 * pipelined.
 */

import { mkdirSync, mkdtempSync, readFileSync, writeFileSync } from "node:fs";
import os from "node:os";
import path from "node:path";
import readline from "node:readline";

import { decodeFrameBlock, encodeFrameBlock } from "./codec.js";
import {
  AnchorRef,
  GenerateRequest,
  Response,
  assertNoiseFree,
  parseRequestLine,
  serializeResponse,
} from "./protocol.js";
import {
  Anchor,
  anchorFromBlock,
  conditioningFromBlock,
  generateInpaint,
  generateLeaf,
  generateRefine,
  generateRoot,
} from "./synth.js";

const CAPABILITIES = {
  max_interval: 2 ** 31 - 1,
  supports_root: true,
  supports_refine: true,
  supports_leaf: true,
  supports_inpaint: true,
  max_concurrency: 4,
};

function loadAnchor(ref: AnchorRef): Anchor {
  const block = decodeFrameBlock(readFileSync(ref.path));
  return anchorFromBlock(ref.time, ref.width, block);
}

function handleGenerate(request: GenerateRequest, scratch: string): Response {
  const { id, kind } = request;
  const params = request.params ?? {};
  assertNoiseFree(params.world);
  const anchorWidth = params.anchor_width ?? 1;
  const cond = conditioningFromBlock(
    request.conditioning.start,
    decodeFrameBlock(readFileSync(request.conditioning.path)),
  );
  const anchors = (request.anchors ?? []).map(loadAnchor);

  if (kind === "root" || kind === "refine") {
    const produced =
      kind === "root"
        ? generateRoot(request.interior, cond, anchorWidth)
        : generateRefine(
            request.interior,
            [anchors[0]!, anchors[1]!],
            cond,
            anchorWidth,
          );
    const out: AnchorRef[] = produced.map((anchor) => {
      const file = path.join(scratch, `resp-${id}-anchor-${anchor.time}.atsb`);
      writeFileSync(file, encodeFrameBlock(anchor.block));
      return { time: anchor.time, width: anchor.width, path: file };
    });
    return { id, status: "ok", anchors: out };
  }

  if (kind === "leaf" || kind === "inpaint_seam") {
    const block =
      kind === "leaf"
        ? generateLeaf(
            request.interval,
            anchors.length >= 2 ? [anchors[0]!, anchors[1]!] : null,
            cond,
          )
        : generateInpaint(
            request.interval,
            [anchors[0]!, anchors[1]!],
            anchors[2]!,
            cond,
          );
    const file = path.join(scratch, `resp-${id}-out.atsb`);
    writeFileSync(file, encodeFrameBlock(block));
    return { id, status: "ok", output_path: file };
  }

  return { id, status: "error", message: `unsupported kind ${String(kind)}` };
}

export function handleLine(line: string, scratch: string): Response {
  const request = parseRequestLine(line);
  if (request === null) {
    return { id: null, status: "error", message: "malformed request line" };
  }
  if (request.op === "capabilities") {
    return { id: request.id, status: "ok", capabilities: CAPABILITIES };
  }
  if (request.op === "generate") {
    try {
      return handleGenerate(request, scratch);
    } catch (err) {
      const message = err instanceof Error ? `${err.name}: ${err.message}` : String(err);
      return { id: request.id, status: "error", message };
    }
  }
  return { id: (request as { id?: string }).id ?? null, status: "error", message: "unsupported" };
}

function main(): void {
  const dirFlag = process.argv.indexOf("--dir");
  let scratch: string;
  if (dirFlag >= 0 && process.argv[dirFlag + 1]) {
    scratch = process.argv[dirFlag + 1]!;
    mkdirSync(scratch, { recursive: true });
  } else {
    scratch = mkdtempSync(path.join(os.tmpdir(), "ats-worker-"));
  }
  const rl = readline.createInterface({ input: process.stdin, terminal: false });
  rl.on("line", (line) => {
    const trimmed = line.trim();
    if (!trimmed) {
      return;
    }
    process.stdout.write(serializeResponse(handleLine(trimmed, scratch)));
  });
}

if (process.argv[1] && import.meta.url.endsWith(path.basename(process.argv[1]))) {
  main();
}
