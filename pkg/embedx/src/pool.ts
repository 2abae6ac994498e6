import { readFileSync } from "node:fs";

import { DataError } from "./errors.js";

export interface PoolInstance {
  id: string;
  input: string;
  output: string;
}

/** Load a pool.jsonl file (one {id, input, output} object per line),
 * preserving line order. Blank lines are skipped; duplicate ids and
 * missing fields are rejected with the offending line number. */
export function loadPool(path: string): PoolInstance[] {
  let text: string;
  try {
    text = readFileSync(path, "utf-8");
  } catch (err) {
    throw new DataError(`cannot read ${path}: ${(err as Error).message}`);
  }

  const instances: PoolInstance[] = [];
  const seen = new Map<string, number>();
  const lines = text.split("\n");
  for (let i = 0; i < lines.length; i++) {
    const lineno = i + 1;
    const line = lines[i].trim();
    if (!line) continue;

    let obj: unknown;
    try {
      obj = JSON.parse(line);
    } catch (err) {
      throw new DataError(
        `${path}: line ${lineno}: malformed JSON: ${(err as Error).message}`,
      );
    }
    if (typeof obj !== "object" || obj === null || Array.isArray(obj)) {
      throw new DataError(`${path}: line ${lineno}: expected a JSON object`);
    }
    const rec = obj as Record<string, unknown>;
    for (const key of ["id", "input", "output"] as const) {
      if (!(key in rec)) {
        throw new DataError(`${path}: line ${lineno}: missing field '${key}'`);
      }
    }
    const id = String(rec.id);
    if (!id) {
      throw new DataError(`${path}: line ${lineno}: empty id`);
    }
    if (typeof rec.input !== "string" || typeof rec.output !== "string") {
      throw new DataError(
        `${path}: line ${lineno}: 'input' and 'output' must be strings`,
      );
    }

    const first = seen.get(id);
    if (first !== undefined) {
      throw new DataError(
        `${path}: line ${lineno}: duplicate id ${JSON.stringify(id)}` +
          ` (first seen on line ${first})`,
      );
    }
    seen.set(id, lineno);
    instances.push({ id, input: rec.input, output: rec.output });
  }
  return instances;
}
