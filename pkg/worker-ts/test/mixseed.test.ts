import assert from "node:assert/strict";
import { readFileSync } from "node:fs";
import path from "node:path";
import { test } from "node:test";
import { fileURLToPath } from "node:url";

import { mixSeed } from "../src/mixseed.js";

const here = path.dirname(fileURLToPath(import.meta.url));
const vectorsPath = path.join(here, "..", "..", "..", "vectors", "mix_seed_vectors.json");

interface VectorCase {
  /** decimal string so 64-bit seeds survive JSON in any language */
  seed: string;
  label: string;
  mixed: string;
}

test("frozen mix-seed vectors reproduce byte-exactly", () => {
  const doc = JSON.parse(readFileSync(vectorsPath, "utf-8")) as {
    version: number;
    cases: VectorCase[];
  };
  assert.equal(doc.version, 1);
  assert.ok(doc.cases.length >= 10);
  for (const c of doc.cases) {
    const got = mixSeed(BigInt(c.seed), c.label);
    assert.equal(got.toString(16).padStart(16, "0"), c.mixed, `seed=${c.seed} label=${c.label}`);
  }
});

test("mixing is deterministic and label-sensitive", () => {
  assert.equal(mixSeed(42n, "leaf:81-161"), mixSeed(42n, "leaf:81-161"));
  assert.notEqual(mixSeed(42n, "leaf:81-161"), mixSeed(42n, "leaf:81-162"));
  assert.notEqual(mixSeed(42n, "a"), mixSeed(43n, "a"));
});

test("results stay in the unsigned 64-bit range", () => {
  for (const seed of [0n, 1n, (1n << 64n) - 1n]) {
    const value = mixSeed(seed, "anything");
    assert.ok(value >= 0n && value < 1n << 64n);
  }
});
