import { mkdirSync, writeFileSync } from "node:fs";
import { join } from "node:path";

import type { Parse } from "./parser.js";

/** Bundle writer. Byte layout of the consumer's embeddings container:
 *
 *   manifest.json  — version, dims, per-instance records whose offsets
 *                    count float32 ELEMENTS into the two arrays, plus the
 *                    pinned model/parser ids and per-run warnings;
 *   sentence.f32   — little-endian float32, one dim_sentence row per
 *                    instance, in pool order;
 *   tokens.f32     — little-endian float32, n_tokens x dim_token rows per
 *                    instance, in pool order;
 *   parses.jsonl   — one parse record per successfully parsed instance.
 *
 * All serialization is canonical (fixed key order, fixed indentation,
 * explicit endianness), so identical inputs produce identical bytes.
 */

export const FORMAT_VERSION = 1;

export interface InstanceArtifacts {
  id: string;
  sentence: Float64Array;
  tokenRows: Float64Array[];
  tokenStrings: string[];
}

export interface BundleInfo {
  dimSentence: number;
  dimToken: number;
  models: { sentence: string; token: string; parser: string };
  truncated: string[];
  parseFailures: { id: string; reason: string }[];
}

function packF32LE(rows: Float64Array[], dim: number): Buffer {
  let total = 0;
  for (const row of rows) total += row.length;
  const buf = Buffer.alloc(total * 4);
  const view = new DataView(buf.buffer, buf.byteOffset, buf.byteLength);
  let at = 0;
  for (const row of rows) {
    if (row.length % dim !== 0) {
      throw new Error(`row of ${row.length} elements is not a multiple of ${dim}`);
    }
    for (let i = 0; i < row.length; i++) {
      view.setFloat32(at, row[i], true);
      at += 4;
    }
  }
  return buf;
}

function parseLine(parse: Parse): string {
  const rec: Record<string, unknown> = {
    id: parse.id,
    tokens: parse.tokens,
    lemmas: parse.lemmas,
    heads: parse.heads,
    dep_labels: parse.depLabels,
  };
  if (parse.joinedSentences > 1) {
    rec.joined_sentences = parse.joinedSentences;
  }
  return JSON.stringify(rec);
}

export function writeBundle(
  outDir: string,
  instances: InstanceArtifacts[],
  parses: Parse[],
  info: BundleInfo,
): void {
  mkdirSync(outDir, { recursive: true });

  const records = [];
  let sentOffset = 0;
  let tokOffset = 0;
  const sentenceRows: Float64Array[] = [];
  const tokenRows: Float64Array[] = [];
  for (const inst of instances) {
    const nTokens = inst.tokenRows.length;
    records.push({
      id: inst.id,
      n_tokens: nTokens,
      sent_offset: sentOffset,
      tok_offset: tokOffset,
      tokens: inst.tokenStrings,
    });
    sentOffset += info.dimSentence;
    tokOffset += nTokens * info.dimToken;
    sentenceRows.push(inst.sentence);
    tokenRows.push(...inst.tokenRows);
  }

  const manifest = {
    version: FORMAT_VERSION,
    dim_sentence: info.dimSentence,
    dim_token: info.dimToken,
    records,
    models: info.models,
    truncated: info.truncated,
    parse_failures: info.parseFailures,
  };

  writeFileSync(join(outDir, "manifest.json"), JSON.stringify(manifest, null, 2) + "\n");
  writeFileSync(join(outDir, "sentence.f32"), packF32LE(sentenceRows, info.dimSentence));
  writeFileSync(join(outDir, "tokens.f32"), packF32LE(tokenRows, info.dimToken));
  writeFileSync(
    join(outDir, "parses.jsonl"),
    parses.map((p) => parseLine(p) + "\n").join(""),
  );
}
