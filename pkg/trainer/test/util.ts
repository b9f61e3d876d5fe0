import { execFile } from "node:child_process";
import { mkdtempSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

/** Corpus bytes from explicit chunk token lists (header + u32 stream). */
export function corpusBytes(
  vocab: number,
  kBits: number,
  maxChunkLen: number,
  chunks: number[][],
): Buffer {
  const tokens = chunks.flat();
  const buf = Buffer.alloc(9 + 4 * tokens.length);
  buf.writeUInt32LE(vocab, 0);
  buf.writeUInt8(kBits, 4);
  buf.writeUInt32LE(maxChunkLen, 5);
  tokens.forEach((t, i) => buf.writeUInt32LE(t, 9 + 4 * i));
  return buf;
}

export function makeTmpDir(): { dir: string; cleanup: () => void } {
  const dir = mkdtempSync(join(tmpdir(), "kpcc-trainer-"));
  return { dir, cleanup: () => rmSync(dir, { recursive: true, force: true }) };
}

export function run(
  cmd: string,
  args: string[],
  opts: { timeoutMs?: number } = {},
): Promise<{ code: number; stdout: string; stderr: string }> {
  return new Promise((resolve) => {
    execFile(
      cmd,
      args,
      { timeout: opts.timeoutMs ?? 120_000, maxBuffer: 64 * 1024 * 1024 },
      (err, stdout, stderr) => {
        const code = err ? ((err as NodeJS.ErrnoException & { code?: number }).code as number) ?? 1 : 0;
        resolve({ code: typeof code === "number" ? code : 1, stdout, stderr });
      },
    );
  });
}

/** Run `fn` over items with at most `limit` in flight. */
export async function pool<T, R>(
  items: T[],
  limit: number,
  fn: (item: T) => Promise<R>,
): Promise<R[]> {
  const out: R[] = new Array(items.length);
  let next = 0;
  const workers = Array.from({ length: Math.min(limit, items.length) }, async () => {
    while (next < items.length) {
      const i = next++;
      out[i] = await fn(items[i]);
    }
  });
  await Promise.all(workers);
  return out;
}
