#!/usr/bin/env node
/** kpcc-train: fit a tiny transformer on a token corpus, emit KPTW. */

import { parseArgs } from "node:util";
import { loadConfig, defaultConfig, ConfigFileError } from "./config";
import { loadCorpus, CorpusError } from "./corpus";
import { train, ConfigError } from "./train";
import { writeKptw } from "./kptw";
import { ModelError } from "./model";

function usage(): string {
  return "usage: kpcc-train [--config cfg.toml] --corpus corpus.bin -o model.kptw";
}

export function main(argv: string[]): number {
  let args;
  try {
    args = parseArgs({
      args: argv,
      options: {
        config: { type: "string" },
        corpus: { type: "string" },
        output: { type: "string", short: "o" },
        quiet: { type: "boolean", default: false },
        help: { type: "boolean", short: "h", default: false },
      },
      allowPositionals: false,
    });
  } catch (e) {
    process.stderr.write(`${(e as Error).message}\n${usage()}\n`);
    return 2;
  }
  if (args.values.help) {
    process.stdout.write(`${usage()}\n`);
    return 0;
  }
  if (!args.values.corpus || !args.values.output) {
    process.stderr.write(`${usage()}\n`);
    return 2;
  }
  try {
    const cfg = args.values.config ? loadConfig(args.values.config) : defaultConfig();
    const corpus = loadCorpus(args.values.corpus);
    if (!args.values.quiet) {
      process.stdout.write(
        `corpus: ${corpus.chunks.length} chunks, ${corpus.tokenCount} tokens, ` +
          `vocab ${corpus.vocab}, K ${corpus.kBits}\n`,
      );
    }
    const t0 = Date.now();
    const result = train(cfg, corpus, (e) => {
      if (args.values.quiet) return;
      const held = e.heldOut !== undefined ? ` | held-out ${e.heldOut.toFixed(4)}` : "";
      process.stdout.write(
        `\rstep ${e.step}/${cfg.steps} | loss ${e.loss.toFixed(4)} bits/token${held}`,
      );
      if (e.heldOut !== undefined) process.stdout.write("\n");
    });
    writeKptw(args.values.output, result.model.toKptw());
    if (!args.values.quiet) {
      const c = result.counts;
      process.stdout.write(
        `\ntrained on ${result.trainChunks} chunks, held out ${result.heldOutChunks}\n` +
          `parameters: ${c.total} total, ${c.trainable} trainable` +
          (cfg.adapter_rank > 0
            ? `, adapters ${c.adapters} (trainable fraction ${(100 * result.trainableFraction).toFixed(2)}%)`
            : "") +
          `\nheld-out bits/token: ${result.heldOutBits.toFixed(4)}\n` +
          `wrote ${args.values.output} in ${((Date.now() - t0) / 1000).toFixed(1)}s\n`,
      );
    } else {
      process.stdout.write(`held-out bits/token: ${result.heldOutBits.toFixed(4)}\n`);
    }
    return 0;
  } catch (e) {
    if (
      e instanceof ConfigFileError ||
      e instanceof ConfigError ||
      e instanceof CorpusError ||
      e instanceof ModelError
    ) {
      process.stderr.write(`kpcc-train: ${e.message}\n`);
      return 1;
    }
    throw e;
  }
}

if (require.main === module) {
  process.exitCode = main(process.argv.slice(2));
}
