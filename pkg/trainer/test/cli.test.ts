import { afterAll, beforeAll, describe, expect, it } from "vitest";
import { existsSync, writeFileSync } from "node:fs";
import { join } from "node:path";
import { readKptw } from "../src/kptw";
import { corpusBytes, makeTmpDir, run } from "./util";

const CLI = join(__dirname, "..", "dist", "cli.js");

describe("kpcc-train command line", () => {
  const tmp = makeTmpDir();
  let corpusPath: string;
  let configPath: string;

  beforeAll(() => {
    corpusPath = join(tmp.dir, "c.bin");
    const chunks = Array.from({ length: 12 }, (_, i) =>
      i % 2 ? [0, 40, 41, 42, 1] : [0, 9, 9, 9, 9, 1],
    );
    writeFileSync(corpusPath, corpusBytes(258, 8, 8, chunks));
    configPath = join(tmp.dir, "cfg.toml");
    writeFileSync(
      configPath,
      [
        "dim = 16",
        "layers = 1",
        "heads = 2",
        "adapter_rank = 8",
        "adapter_alpha = 16",
        "lr = 5e-3",
        "steps = 40",
        "batch = 4",
        "seed = 5",
      ].join("\n") + "\n",
    );
  });

  afterAll(() => tmp.cleanup());

  it("trains from a TOML config and writes a loadable KPTW file", async () => {
    const out = join(tmp.dir, "model.kptw");
    const res = await run("node", [
      CLI, "--config", configPath, "--corpus", corpusPath, "-o", out,
    ]);
    expect(res.code, res.stderr).toBe(0);
    expect(res.stdout).toContain("held-out bits/token");
    expect(res.stdout).toContain("trainable fraction");
    const file = readKptw(out);
    expect(file.header.vocabSize).toBe(258);
    expect(file.header.adapterRank).toBe(8);
    expect(file.tensors.has("layers.0.attn.wq.lora_a")).toBe(true);
  });

  it("exits 2 with usage when required flags are missing", async () => {
    const res = await run("node", [CLI, "--corpus", corpusPath]);
    expect(res.code).toBe(2);
    expect(res.stderr).toContain("usage:");
  });

  it("exits 1 on a config/corpus vocab mismatch", async () => {
    const bad = join(tmp.dir, "bad.toml");
    writeFileSync(bad, "vocab_size = 300\nsteps = 1\n");
    const out = join(tmp.dir, "never.kptw");
    const res = await run("node", [CLI, "--config", bad, "--corpus", corpusPath, "-o", out]);
    expect(res.code).toBe(1);
    expect(res.stderr).toContain("vocab");
    expect(existsSync(out)).toBe(false);
  });

  it("exits 1 on an invalid TOML value", async () => {
    const bad = join(tmp.dir, "invalid.toml");
    writeFileSync(bad, "dim = -4\n");
    const res = await run("node", [
      CLI, "--config", bad, "--corpus", corpusPath, "-o", join(tmp.dir, "x.kptw"),
    ]);
    expect(res.code).toBe(1);
    expect(res.stderr).toContain("dim");
  });
});
