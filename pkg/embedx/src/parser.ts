import { ConfigError, ParseFailure } from "./errors.js";
import { sentences, words } from "./tokenize.js";

/** chain-v1: a deterministic dependency parser producing backward chains.
 *
 * Within a sentence, every token's head is its predecessor and the first
 * token is the sentence root. Multi-sentence inputs form ONE tree: the
 * first sentence keeps the lone -1 root (consumers require exactly one),
 * and each later sentence's root attaches to it with a "sentjoin" label —
 * the synthetic-root join, flagged on the record via joined_sentences.
 */

export interface ParserSpec {
  id: string;
  /** Hard token limit; longer instances are a per-instance failure. */
  maxTokens: number;
}

export const PARSERS: Record<string, ParserSpec> = {
  "chain-v1": { id: "chain-v1", maxTokens: 512 },
};

export function resolveParser(parserId: string): ParserSpec {
  const spec = PARSERS[parserId];
  if (!spec) {
    const known = Object.keys(PARSERS).sort().join(", ");
    throw new ConfigError(`unknown parser '${parserId}' (known: ${known})`);
  }
  return spec;
}

export interface Parse {
  id: string;
  tokens: string[];
  lemmas: string[];
  /** heads[i] = index of token i's head; -1 marks the single root. */
  heads: number[];
  depLabels: string[];
  /** Number of sentences joined into the tree; 1 for single-sentence. */
  joinedSentences: number;
}

export function parseInstance(
  id: string,
  input: string,
  spec: ParserSpec,
): Parse {
  const ws = words(input);
  if (ws.length === 0) {
    throw new ParseFailure(id, "no tokens to parse");
  }
  if (ws.length > spec.maxTokens) {
    throw new ParseFailure(
      id,
      `${ws.length} tokens exceed the ${spec.id} limit of ${spec.maxTokens}`,
    );
  }

  const groups = sentences(ws);
  const tokens: string[] = [];
  const heads: number[] = [];
  const depLabels: string[] = [];
  for (const group of groups) {
    const start = tokens.length;
    for (let j = 0; j < group.length; j++) {
      tokens.push(group[j]);
      if (j > 0) {
        heads.push(start + j - 1);
        depLabels.push("dep");
      } else if (start === 0) {
        heads.push(-1);
        depLabels.push("root");
      } else {
        heads.push(0);
        depLabels.push("sentjoin");
      }
    }
  }

  return {
    id,
    tokens,
    lemmas: tokens.map((t) => t.toLowerCase()),
    heads,
    depLabels,
    joinedSentences: groups.length,
  };
}
