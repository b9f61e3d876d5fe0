/**
 * Reader for the token-corpus files the codec CLI exports.
 *
 * Layout (all little-endian):
 *   vocab          u32
 *   K              u8    tree arity in bits (8 for octree, 12 for mixed)
 *   max_chunk_len  u32
 *   tokens         u32[] every chunk back to back, bos and eos included
 *
 * Chunks are self-delimiting: each starts with bos (0) and ends with eos (1).
 * The pad id (2) never appears in a corpus file.
 */

import { readFileSync } from "node:fs";

export const BOS = 0;
export const EOS = 1;
export const PAD = 2;

export class CorpusError extends Error {}

export interface Corpus {
  vocab: number;
  kBits: number;
  maxChunkLen: number;
  /** Each chunk as stored: [bos, ...body, eos]. */
  chunks: Uint32Array[];
  tokenCount: number;
}

export function parseCorpus(buf: Buffer): Corpus {
  if (buf.length < 9) {
    throw new CorpusError(`corpus header truncated (${buf.length} bytes)`);
  }
  const vocab = buf.readUInt32LE(0);
  const kBits = buf.readUInt8(4);
  const maxChunkLen = buf.readUInt32LE(5);
  if (vocab < 4) throw new CorpusError(`vocab ${vocab} too small`);
  if (maxChunkLen < 1) throw new CorpusError("max_chunk_len must be positive");
  const body = buf.length - 9;
  if (body % 4 !== 0) {
    throw new CorpusError(`token stream length ${body} not a multiple of 4`);
  }
  const n = body / 4;
  const chunks: Uint32Array[] = [];
  let cur: number[] | null = null;
  let tokenCount = 0;
  for (let i = 0; i < n; i++) {
    const tok = buf.readUInt32LE(9 + 4 * i);
    if (tok >= vocab) {
      throw new CorpusError(`token ${tok} at index ${i} out of range for vocab ${vocab}`);
    }
    if (tok === PAD) throw new CorpusError(`pad token at index ${i}`);
    if (cur === null) {
      if (tok !== BOS) throw new CorpusError(`chunk at index ${i} does not start with bos`);
      cur = [tok];
      continue;
    }
    if (tok === BOS) throw new CorpusError(`bos inside chunk at index ${i}`);
    cur.push(tok);
    if (tok === EOS) {
      if (cur.length - 2 > maxChunkLen) {
        throw new CorpusError(
          `chunk body ${cur.length - 2} exceeds max_chunk_len ${maxChunkLen}`,
        );
      }
      chunks.push(Uint32Array.from(cur));
      tokenCount += cur.length;
      cur = null;
    }
  }
  if (cur !== null) throw new CorpusError("final chunk not terminated by eos");
  if (chunks.length === 0) throw new CorpusError("corpus contains no chunks");
  return { vocab, kBits, maxChunkLen, chunks, tokenCount };
}

export function loadCorpus(path: string): Corpus {
  return parseCorpus(readFileSync(path));
}
