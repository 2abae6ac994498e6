/** Deterministic string-seeded pseudo-random vectors.
 *
 * Everything here is integer arithmetic plus IEEE-754 multiply/divide, so
 * output is bit-identical across runs and platforms — the determinism the
 * bytewise re-export contract rests on. No transcendental functions are
 * used anywhere in the encoding path (their last-bit rounding is
 * engine-specific); vector components are uniform in [-1, 1) rather than
 * gaussian for exactly that reason.
 */

/** 32-bit FNV-1a over UTF-16 code units, with a tweakable offset basis so
 * two independent lanes can be drawn from one string. */
export function fnv1a32(text: string, basis = 0x811c9dc5): number {
  let h = basis >>> 0;
  for (let i = 0; i < text.length; i++) {
    h ^= text.charCodeAt(i);
    h = Math.imul(h, 0x01000193);
  }
  return h >>> 0;
}

/** splitmix32: a small, well-mixed 32-bit PRNG. Returns uniforms in [0, 1). */
export function splitmix32(seed: number): () => number {
  let state = seed >>> 0;
  return () => {
    state = (state + 0x9e3779b9) >>> 0;
    let z = state;
    z = Math.imul(z ^ (z >>> 16), 0x21f0aaad);
    z = Math.imul(z ^ (z >>> 15), 0x735a2d97);
    z ^= z >>> 15;
    return (z >>> 0) / 4294967296;
  };
}

/** Pseudo-random vector for a piece string: components uniform in [-1, 1),
 * drawn from a PRNG seeded by two FNV lanes over "salt\x1fpiece". */
export function pieceVector(piece: string, dim: number, salt: string): Float64Array {
  const keyed = `${salt}${piece}`;
  const seed = fnv1a32(keyed) ^ Math.imul(fnv1a32(keyed, 0x9747b28c), 0x85ebca6b);
  const next = splitmix32(seed);
  const v = new Float64Array(dim);
  for (let d = 0; d < dim; d++) {
    v[d] = next() * 2 - 1;
  }
  return v;
}
