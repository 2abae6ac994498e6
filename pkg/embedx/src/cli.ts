#!/usr/bin/env node
import { realpathSync } from "node:fs";
import { pathToFileURL } from "node:url";
import { parseArgs } from "node:util";

import { ConfigError, DataError } from "./errors.js";
import { runExport } from "./export.js";

const USAGE = `usage: embedx export --pool <pool.jsonl> --out <dir>
                     --sentence-model <id> --token-model <id> --parser <id>
                     [--batch-size <n>] [--device <hint>]

Exports an embeddings container (manifest.json, sentence.f32, tokens.f32)
and dependency parses (parses.jsonl) for every instance of the pool.

exit codes: 0 success; 1 data error or recorded parse failures; 2 bad usage`;

interface Streams {
  out: (line: string) => void;
  err: (line: string) => void;
}

function exportCommand(argv: string[], io: Streams): number {
  const { values } = parseArgs({
    args: argv,
    options: {
      pool: { type: "string" },
      out: { type: "string" },
      "sentence-model": { type: "string" },
      "token-model": { type: "string" },
      parser: { type: "string" },
      "batch-size": { type: "string" },
      device: { type: "string" },
    },
    allowPositionals: false,
  });

  for (const flag of ["pool", "out", "sentence-model", "token-model", "parser"] as const) {
    if (!values[flag]) {
      throw new ConfigError(`missing required flag --${flag}`);
    }
  }
  let batchSize: number | undefined;
  if (values["batch-size"] !== undefined) {
    batchSize = Number(values["batch-size"]);
    if (!Number.isInteger(batchSize) || batchSize < 1) {
      throw new ConfigError(`--batch-size must be a positive integer, got '${values["batch-size"]}'`);
    }
  }

  const result = runExport({
    poolPath: values.pool!,
    outDir: values.out!,
    sentenceModel: values["sentence-model"]!,
    tokenModel: values["token-model"]!,
    parser: values.parser!,
    batchSize,
    device: values.device,
  });

  io.out(`exported ${result.instances} instances to ${values.out}`);
  for (const id of result.truncated) {
    io.err(`warning: instance ${JSON.stringify(id)} truncated to the encoder word limit`);
  }
  if (result.parseFailures.length > 0) {
    for (const failure of result.parseFailures) {
      io.err(`parse failure: ${JSON.stringify(failure.id)}: ${failure.reason}`);
    }
    io.err(`${result.parseFailures.length} instance(s) missing from parses.jsonl`);
    return 1;
  }
  return 0;
}

export function main(argv: string[], io?: Streams): number {
  const streams: Streams = io ?? {
    out: (line) => process.stdout.write(line + "\n"),
    err: (line) => process.stderr.write(line + "\n"),
  };
  const [command, ...rest] = argv;
  try {
    if (command !== "export") {
      streams.err(USAGE);
      return 2;
    }
    return exportCommand(rest, streams);
  } catch (err) {
    if (err instanceof DataError) {
      streams.err(`error: ${err.message}`);
      return 1;
    }
    if (err instanceof ConfigError) {
      streams.err(`error: ${err.message}`);
      streams.err(USAGE);
      return 2;
    }
    // node:util parseArgs rejects unknown flags with a coded TypeError
    if (err instanceof TypeError && "code" in err) {
      streams.err(`error: ${err.message}`);
      streams.err(USAGE);
      return 2;
    }
    throw err;
  }
}

const entry = process.argv[1] ? pathToFileURL(realpathSync(process.argv[1])).href : "";
if (import.meta.url === entry) {
  process.exit(main(process.argv.slice(2)));
}
