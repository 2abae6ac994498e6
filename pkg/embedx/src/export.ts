import {
  SENTENCE_ENCODERS,
  TOKEN_ENCODERS,
  encodeSentence,
  encodeTokens,
  resolveEncoder,
} from "./encoders.js";
import { ParseFailure } from "./errors.js";
import { resolveParser, parseInstance, type Parse } from "./parser.js";
import { loadPool } from "./pool.js";
import { writeBundle, type InstanceArtifacts } from "./container.js";

export interface ExportJob {
  poolPath: string;
  outDir: string;
  sentenceModel: string;
  tokenModel: string;
  parser: string;
  /** Accepted for interface parity with batched neural encoders; the
   * hash encoders are stateless so both are ignored. */
  batchSize?: number;
  device?: string;
}

export interface ExportResult {
  instances: number;
  truncated: string[];
  parseFailures: { id: string; reason: string }[];
}

/** Run a full export: embeddings for every instance (empty input aborts,
 * naming the id), parses for every instance the parser handles. Parser
 * failures are recorded in the manifest and returned — the caller decides
 * the exit code; the bundle is still written without those parse records. */
export function runExport(job: ExportJob): ExportResult {
  const sentenceSpec = resolveEncoder(SENTENCE_ENCODERS, job.sentenceModel, "sentence");
  const tokenSpec = resolveEncoder(TOKEN_ENCODERS, job.tokenModel, "token");
  const parserSpec = resolveParser(job.parser);
  const pool = loadPool(job.poolPath);

  const artifacts: InstanceArtifacts[] = [];
  const truncatedIds = new Set<string>();
  for (const inst of pool) {
    const sent = encodeSentence(inst.id, inst.input, sentenceSpec);
    const toks = encodeTokens(inst.id, inst.input, tokenSpec);
    if (sent.truncated || toks.truncated) truncatedIds.add(inst.id);
    artifacts.push({
      id: inst.id,
      sentence: sent.vector,
      tokenRows: toks.rows,
      tokenStrings: toks.tokens,
    });
  }

  const parses: Parse[] = [];
  const parseFailures: { id: string; reason: string }[] = [];
  for (const inst of pool) {
    try {
      parses.push(parseInstance(inst.id, inst.input, parserSpec));
    } catch (err) {
      if (err instanceof ParseFailure) {
        parseFailures.push({ id: err.instanceId, reason: err.reason });
      } else {
        throw err;
      }
    }
  }

  const truncated = [...truncatedIds];
  writeBundle(job.outDir, artifacts, parses, {
    dimSentence: sentenceSpec.dim,
    dimToken: tokenSpec.dim,
    models: {
      sentence: sentenceSpec.id,
      token: tokenSpec.id,
      parser: parserSpec.id,
    },
    truncated,
    parseFailures,
  });

  return { instances: pool.length, truncated, parseFailures };
}
