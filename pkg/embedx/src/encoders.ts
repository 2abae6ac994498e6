import { ConfigError, DataError } from "./errors.js";
import { pieceVector } from "./hash.js";
import { pieces, words } from "./tokenize.js";

/** Hash-projection encoders: deterministic stand-ins with the same output
 * contract as a neural encoder behind the same id-keyed registry —
 * unit-norm rows, duplicate inputs encode identically, long inputs
 * truncate with a warning. Sub-token (character-trigram) piece vectors are
 * mean-pooled per surface word and re-normalized, so one row per word and
 * no boundary tokens ever appear in the output. */

export interface EncoderSpec {
  id: string;
  dim: number;
  /** Truncation threshold, in surface words. */
  maxWords: number;
}

export const SENTENCE_ENCODERS: Record<string, EncoderSpec> = {
  "hashproj-256-v1": { id: "hashproj-256-v1", dim: 256, maxWords: 256 },
};

export const TOKEN_ENCODERS: Record<string, EncoderSpec> = {
  "ctxhash-64-v1": { id: "ctxhash-64-v1", dim: 64, maxWords: 256 },
};

export function resolveEncoder(
  registry: Record<string, EncoderSpec>,
  modelId: string,
  role: string,
): EncoderSpec {
  const spec = registry[modelId];
  if (!spec) {
    const known = Object.keys(registry).sort().join(", ");
    throw new ConfigError(`unknown ${role} model '${modelId}' (known: ${known})`);
  }
  return spec;
}

function normalized(v: Float64Array): Float64Array {
  let sq = 0;
  for (let d = 0; d < v.length; d++) sq += v[d] * v[d];
  const norm = Math.sqrt(sq);
  if (norm < 1e-12) {
    // Cancellation to a zero vector is astronomically unlikely but would
    // poison the norm contract; fall back to a fixed basis vector.
    const out = new Float64Array(v.length);
    out[0] = 1;
    return out;
  }
  const out = new Float64Array(v.length);
  for (let d = 0; d < v.length; d++) out[d] = v[d] / norm;
  return out;
}

/** Unit-norm vector for one surface word: mean of its piece vectors. */
export function wordVector(word: string, spec: EncoderSpec): Float64Array {
  const ps = pieces(word);
  const acc = new Float64Array(spec.dim);
  for (const p of ps) {
    const pv = pieceVector(p, spec.dim, spec.id);
    for (let d = 0; d < spec.dim; d++) acc[d] += pv[d];
  }
  for (let d = 0; d < spec.dim; d++) acc[d] /= ps.length;
  return normalized(acc);
}

export interface EncodedInstance {
  /** Surface words actually encoded (after any truncation). */
  tokens: string[];
  /** True when the input exceeded the encoder's word limit. */
  truncated: boolean;
}

export interface SentenceEncoding extends EncodedInstance {
  vector: Float64Array;
}

export interface TokenEncoding extends EncodedInstance {
  /** One unit-norm row per entry of tokens. */
  rows: Float64Array[];
}

function contentWords(id: string, input: string, spec: EncoderSpec): EncodedInstance {
  const ws = words(input);
  if (ws.length === 0) {
    throw new DataError(`instance ${JSON.stringify(id)}: empty input`);
  }
  if (ws.length > spec.maxWords) {
    return { tokens: ws.slice(0, spec.maxWords), truncated: true };
  }
  return { tokens: ws, truncated: false };
}

/** Sentence embedding: mean of word vectors, re-normalized. */
export function encodeSentence(
  id: string,
  input: string,
  spec: EncoderSpec,
): SentenceEncoding {
  const { tokens, truncated } = contentWords(id, input, spec);
  const acc = new Float64Array(spec.dim);
  for (const w of tokens) {
    const wv = wordVector(w, spec);
    for (let d = 0; d < spec.dim; d++) acc[d] += wv[d];
  }
  for (let d = 0; d < spec.dim; d++) acc[d] /= tokens.length;
  return { tokens, truncated, vector: normalized(acc) };
}

const NEIGHBOR_WEIGHT = 0.25;

/** Contextual token embeddings: each word's vector blended with a quarter
 * of each immediate neighbor, re-normalized. The same word in different
 * contexts encodes differently; identical inputs encode identically. */
export function encodeTokens(
  id: string,
  input: string,
  spec: EncoderSpec,
): TokenEncoding {
  const { tokens, truncated } = contentWords(id, input, spec);
  const base = tokens.map((w) => wordVector(w, spec));
  const rows: Float64Array[] = [];
  for (let i = 0; i < base.length; i++) {
    const acc = new Float64Array(spec.dim);
    for (let d = 0; d < spec.dim; d++) acc[d] = base[i][d];
    if (i > 0) {
      for (let d = 0; d < spec.dim; d++) acc[d] += NEIGHBOR_WEIGHT * base[i - 1][d];
    }
    if (i + 1 < base.length) {
      for (let d = 0; d < spec.dim; d++) acc[d] += NEIGHBOR_WEIGHT * base[i + 1][d];
    }
    rows.push(normalized(acc));
  }
  return { tokens, truncated, rows };
}
