/** TOML training configuration, validated with zod. */

import { readFileSync } from "node:fs";
import { parse as parseToml } from "smol-toml";
import { z } from "zod";

const schema = z
  .object({
    vocab_size: z.number().int().min(4).optional(),
    dim: z.number().int().min(2).default(64),
    layers: z.number().int().min(1).default(2),
    heads: z.number().int().min(1).default(2),
    max_ctx: z.number().int().min(2).optional(),
    adapter_rank: z.number().int().min(0).default(8),
    adapter_alpha: z.number().default(16),
    lr: z.number().positive().default(3e-3),
    steps: z.number().int().min(1).default(1000),
    batch: z.number().int().min(1).default(8),
    seed: z.number().int().min(0).default(0),
    holdout_every: z.number().int().min(0).default(16),
  })
  .strict()
  .refine((c) => c.dim % c.heads === 0, {
    message: "dim must be divisible by heads",
  });

export type TrainConfig = z.infer<typeof schema>;

export class ConfigFileError extends Error {}

export function parseConfig(raw: unknown): TrainConfig {
  const res = schema.safeParse(raw);
  if (!res.success) {
    const msgs = res.error.issues
      .map((i) => `${i.path.join(".") || "(root)"}: ${i.message}`)
      .join("; ");
    throw new ConfigFileError(msgs);
  }
  return res.data;
}

export function loadConfig(path: string): TrainConfig {
  let doc: unknown;
  try {
    doc = parseToml(readFileSync(path, "utf-8"));
  } catch (e) {
    throw new ConfigFileError(`${path}: ${(e as Error).message}`);
  }
  return parseConfig(doc);
}

/** Defaults for programmatic use; equivalent to an empty TOML file. */
export function defaultConfig(overrides: Partial<TrainConfig> = {}): TrainConfig {
  return parseConfig(overrides);
}
