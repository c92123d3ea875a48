/** Wire-protocol types and line parsing (newline-delimited JSON). */

export interface AnchorRef {
  time: number;
  width: number;
  path: string;
}

export interface GenerateRequest {
  id: string;
  op: "generate";
  kind: "root" | "refine" | "leaf" | "inpaint_seam";
  interval: [number, number];
  anchors: AnchorRef[];
  conditioning: { path: string; start: number; end: number };
  interior: number[];
  seed: number;
  params?: {
    world?: Record<string, number>;
    level?: number;
    call_id?: string;
    anchor_width?: number;
  };
}

export interface CapabilitiesRequest {
  id: string;
  op: "capabilities";
}

export type Request = GenerateRequest | CapabilitiesRequest;

export interface Response {
  id: string | null;
  status: "ok" | "error";
  anchors?: AnchorRef[];
  output_path?: string;
  message?: string;
  capabilities?: Record<string, unknown>;
}

export function parseRequestLine(line: string): Request | null {
  let obj: unknown;
  try {
    obj = JSON.parse(line);
  } catch {
    return null;
  }
  if (typeof obj !== "object" || obj === null || !("id" in obj)) {
    return null;
  }
  return obj as Request;
}

export function serializeResponse(resp: Response): string {
  return JSON.stringify(resp) + "\n";
}

/** Sigmas that shape tree-call outputs; all must be zero for this worker. */
const GENERATION_SIGMAS = [
  "sigma_leaf",
  "sigma_struct",
  "sigma_root_shared",
  "sigma_root_anchor",
];

export function assertNoiseFree(world: Record<string, number> | undefined): void {
  for (const key of GENERATION_SIGMAS) {
    const value = world?.[key] ?? 0;
    if (value !== 0) {
      throw new Error(`unsupported: stochastic params (${key}=${value}) need the in-process backend`);
    }
  }
}
