/** Error taxonomy mirroring the consumer's exit-code contract:
 * DataError -> exit 1 (bad or unreadable inputs), ConfigError -> exit 2
 * (unknown models, bad flags). */

export class DataError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "DataError";
  }
}

export class ConfigError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "ConfigError";
  }
}

/** Per-instance parser failure: recorded and skipped, never fatal mid-run. */
export class ParseFailure extends Error {
  constructor(
    public readonly instanceId: string,
    public readonly reason: string,
  ) {
    super(`parse failure for ${JSON.stringify(instanceId)}: ${reason}`);
    this.name = "ParseFailure";
  }
}
