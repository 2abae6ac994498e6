/** Whitespace word tokenization plus sentence grouping.
 *
 * Sentence boundaries fall only BETWEEN whitespace-delimited words (a word
 * ending in . ! or ? closes its sentence), so the concatenation of all
 * sentence token lists is exactly words(input) — token rows, token surface
 * strings, and parse tokens stay aligned by construction.
 */

const WORD_SEP = /\s+/;
const SENTENCE_END = /[.!?]$/;

/** Surface words of an input: whitespace-separated, order preserved. */
export function words(input: string): string[] {
  return input.split(WORD_SEP).filter((w) => w.length > 0);
}

/** Group words into sentences. A word ending in sentence-final punctuation
 * closes the current sentence; a trailing unterminated group still forms
 * one. Empty input gives zero sentences. */
export function sentences(ws: readonly string[]): string[][] {
  const out: string[][] = [];
  let current: string[] = [];
  for (const w of ws) {
    current.push(w);
    if (SENTENCE_END.test(w)) {
      out.push(current);
      current = [];
    }
  }
  if (current.length > 0) out.push(current);
  return out;
}

const PIECE_BEGIN = "";
const PIECE_END = "";

/** Character-trigram sub-token pieces of a word, taken over the word
 * decorated with begin/end sentinels. The sentinels exist only inside
 * pieces — they are never emitted as tokens of their own, which is the
 * boundary-token exclusion policy of both encoders. Every word yields at
 * least one piece. */
export function pieces(word: string): string[] {
  const decorated = PIECE_BEGIN + word + PIECE_END;
  const out: string[] = [];
  for (let i = 0; i + 3 <= decorated.length; i++) {
    out.push(decorated.slice(i, i + 3));
  }
  return out;
}
