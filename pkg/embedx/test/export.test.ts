import { mkdtempSync, readFileSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { describe, expect, it } from "vitest";

import { main } from "../src/cli.js";
import { runExport } from "../src/export.js";

function tempDir(): string {
  return mkdtempSync(join(tmpdir(), "embedx-export-"));
}

function writePool(lines: string[]): string {
  const dir = tempDir();
  const path = join(dir, "pool.jsonl");
  writeFileSync(path, lines.join("\n") + "\n");
  return path;
}

const BASE_POOL = [
  '{"id":"a","input":"list rivers","output":"answer(river(all))"}',
  '{"id":"b","input":"first part. second part.","output":"o"}',
  '{"id":"c","input":"list rivers","output":"other"}',
];

function baseJob(poolPath: string, outDir: string) {
  return {
    poolPath,
    outDir,
    sentenceModel: "hashproj-256-v1",
    tokenModel: "ctxhash-64-v1",
    parser: "chain-v1",
  };
}

function f32LE(path: string): number[] {
  const buf = readFileSync(path);
  const view = new DataView(buf.buffer, buf.byteOffset, buf.byteLength);
  const out: number[] = [];
  for (let at = 0; at < buf.byteLength; at += 4) out.push(view.getFloat32(at, true));
  return out;
}

describe("runExport", () => {
  it("writes a complete bundle with pinned models and contiguous offsets", () => {
    const out = tempDir();
    const result = runExport(baseJob(writePool(BASE_POOL), out));
    expect(result).toEqual({ instances: 3, truncated: [], parseFailures: [] });

    const manifest = JSON.parse(readFileSync(join(out, "manifest.json"), "utf-8"));
    expect(manifest.version).toBe(1);
    expect(manifest.dim_sentence).toBe(256);
    expect(manifest.dim_token).toBe(64);
    expect(manifest.models).toEqual({
      sentence: "hashproj-256-v1",
      token: "ctxhash-64-v1",
      parser: "chain-v1",
    });
    expect(manifest.records.map((r: { id: string }) => r.id)).toEqual(["a", "b", "c"]);

    let sentOff = 0;
    let tokOff = 0;
    for (const rec of manifest.records) {
      expect(rec.sent_offset).toBe(sentOff);
      expect(rec.tok_offset).toBe(tokOff);
      expect(rec.n_tokens).toBe(rec.tokens.length);
      sentOff += manifest.dim_sentence;
      tokOff += rec.n_tokens * manifest.dim_token;
    }
    expect(f32LE(join(out, "sentence.f32"))).toHaveLength(sentOff);
    expect(f32LE(join(out, "tokens.f32"))).toHaveLength(tokOff);

    const parses = readFileSync(join(out, "parses.jsonl"), "utf-8")
      .trim()
      .split("\n")
      .map((line) => JSON.parse(line));
    expect(parses.map((p) => p.id)).toEqual(["a", "b", "c"]);
    expect(parses[1].joined_sentences).toBe(2);
    expect(parses[0]).not.toHaveProperty("joined_sentences");
  });

  it("keeps every written row unit-norm within 1e-4 after the f32 cast", () => {
    const out = tempDir();
    runExport(baseJob(writePool(BASE_POOL), out));
    const manifest = JSON.parse(readFileSync(join(out, "manifest.json"), "utf-8"));
    const sent = f32LE(join(out, "sentence.f32"));
    const toks = f32LE(join(out, "tokens.f32"));
    const rowNorm = (data: number[], off: number, dim: number) =>
      Math.sqrt(data.slice(off, off + dim).reduce((s, x) => s + x * x, 0));

    for (const rec of manifest.records) {
      expect(Math.abs(rowNorm(sent, rec.sent_offset, 256) - 1)).toBeLessThan(1e-4);
      for (let t = 0; t < rec.n_tokens; t++) {
        expect(Math.abs(rowNorm(toks, rec.tok_offset + t * 64, 64) - 1)).toBeLessThan(1e-4);
      }
    }
  });

  it("re-exports bytewise identically", () => {
    const pool = writePool(BASE_POOL);
    const out1 = tempDir();
    const out2 = tempDir();
    runExport(baseJob(pool, out1));
    runExport(baseJob(pool, out2));
    for (const name of ["manifest.json", "sentence.f32", "tokens.f32", "parses.jsonl"]) {
      expect(readFileSync(join(out1, name)).equals(readFileSync(join(out2, name)))).toBe(
        true,
      );
    }
  });

  it("gives duplicate inputs identical sentence rows", () => {
    const out = tempDir();
    runExport(baseJob(writePool(BASE_POOL), out));
    const manifest = JSON.parse(readFileSync(join(out, "manifest.json"), "utf-8"));
    const sent = f32LE(join(out, "sentence.f32"));
    const recs = Object.fromEntries(
      manifest.records.map((r: { id: string }) => [r.id, r]),
    );
    expect(sent.slice(recs.a.sent_offset, recs.a.sent_offset + 256)).toEqual(
      sent.slice(recs.c.sent_offset, recs.c.sent_offset + 256),
    );
  });

  it("records parser failures, skips their parse rows, and still writes embeddings", () => {
    const long = Array.from({ length: 600 }, (_, i) => `t${i}`).join(" ");
    const pool = writePool([
      ...BASE_POOL,
      `{"id":"big","input":"${long}","output":"o"}`,
    ]);
    const out = tempDir();
    const result = runExport(baseJob(pool, out));
    expect(result.truncated).toEqual(["big"]); // 600 words > the 256-word encoder cap
    expect(result.parseFailures).toHaveLength(1);
    expect(result.parseFailures[0].id).toBe("big");
    expect(result.parseFailures[0].reason).toMatch(/512/);

    const manifest = JSON.parse(readFileSync(join(out, "manifest.json"), "utf-8"));
    expect(manifest.truncated).toEqual(["big"]);
    expect(manifest.parse_failures).toEqual(result.parseFailures);
    const bigRec = manifest.records.find((r: { id: string }) => r.id === "big");
    expect(bigRec.n_tokens).toBe(256);

    const parsedIds = readFileSync(join(out, "parses.jsonl"), "utf-8")
      .trim()
      .split("\n")
      .map((line) => JSON.parse(line).id);
    expect(parsedIds).toEqual(["a", "b", "c"]);
  });
});

describe("cli main", () => {
  function run(argv: string[]) {
    const out: string[] = [];
    const err: string[] = [];
    const code = main(argv, {
      out: (line) => out.push(line),
      err: (line) => err.push(line),
    });
    return { code, out, err };
  }

  function exportArgs(pool: string, out: string, overrides: Record<string, string> = {}) {
    const flags: Record<string, string> = {
      "--pool": pool,
      "--out": out,
      "--sentence-model": "hashproj-256-v1",
      "--token-model": "ctxhash-64-v1",
      "--parser": "chain-v1",
      ...overrides,
    };
    return ["export", ...Object.entries(flags).flat()];
  }

  it("exits 0 on success with a summary line", () => {
    const { code, out } = run(exportArgs(writePool(BASE_POOL), tempDir()));
    expect(code).toBe(0);
    expect(out[0]).toMatch(/exported 3 instances/);
  });

  it("exits 2 with usage when the command is missing or unknown", () => {
    expect(run([]).code).toBe(2);
    const { code, err } = run(["import"]);
    expect(code).toBe(2);
    expect(err.join("\n")).toMatch(/usage:/);
  });

  it("exits 2 on a missing required flag", () => {
    const { code, err } = run(["export", "--pool", "x.jsonl"]);
    expect(code).toBe(2);
    expect(err[0]).toMatch(/--out/);
  });

  it("exits 2 on an unknown flag", () => {
    const { code } = run(
      exportArgs(writePool(BASE_POOL), tempDir(), { "--gpu": "yes" }),
    );
    expect(code).toBe(2);
  });

  it("exits 2 on an unknown model", () => {
    const { code, err } = run(
      exportArgs(writePool(BASE_POOL), tempDir(), { "--sentence-model": "nope-v1" }),
    );
    expect(code).toBe(2);
    expect(err[0]).toMatch(/unknown sentence model 'nope-v1'/);
  });

  it("exits 1 on an unreadable pool", () => {
    const { code, err } = run(exportArgs("/nonexistent/pool.jsonl", tempDir()));
    expect(code).toBe(1);
    expect(err[0]).toMatch(/error: cannot read/);
  });

  it("exits 1 on an empty input, naming the instance", () => {
    const pool = writePool(['{"id":"blank","input":"  ","output":"o"}']);
    const { code, err } = run(exportArgs(pool, tempDir()));
    expect(code).toBe(1);
    expect(err[0]).toMatch(/"blank": empty input/);
  });

  it("exits 1 when parse failures were recorded, after writing the bundle", () => {
    const long = Array.from({ length: 600 }, (_, i) => `t${i}`).join(" ");
    const pool = writePool([...BASE_POOL, `{"id":"big","input":"${long}","output":"o"}`]);
    const out = tempDir();
    const { code, err } = run(exportArgs(pool, out));
    expect(code).toBe(1);
    expect(err.join("\n")).toMatch(/parse failure: "big"/);
    expect(err.join("\n")).toMatch(/truncated/);
    expect(JSON.parse(readFileSync(join(out, "manifest.json"), "utf-8")).records).toHaveLength(4);
  });

  it("accepts batch-size and device hints without changing output", () => {
    const pool = writePool(BASE_POOL);
    const out1 = tempDir();
    const out2 = tempDir();
    expect(run(exportArgs(pool, out1)).code).toBe(0);
    expect(
      run(exportArgs(pool, out2, { "--batch-size": "16", "--device": "cpu" })).code,
    ).toBe(0);
    expect(
      readFileSync(join(out1, "sentence.f32")).equals(
        readFileSync(join(out2, "sentence.f32")),
      ),
    ).toBe(true);
  });

  it("rejects a non-integer batch size", () => {
    const { code, err } = run(
      exportArgs(writePool(BASE_POOL), tempDir(), { "--batch-size": "many" }),
    );
    expect(code).toBe(2);
    expect(err[0]).toMatch(/batch-size/);
  });
});
