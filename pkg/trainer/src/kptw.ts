/**
 * Writer (and verifying reader) for KPTW weight files.
 *
 * Layout (little-endian):
 *   magic   "KPTW"
 *   version u8 = 1
 *   header  vocab u32, dim u32, layers u32, heads u32, max_ctx u32,
 *           adapter_rank u32, adapter_alpha f32
 *   records name_len u16, name utf-8, ndim u8, dims u32[ndim], f32 data
 *           in C order, repeated until end of file
 *
 * The codec folds lora_a/lora_b pairs into their base matrices at load
 * time, so a file with adapter_rank > 0 must carry every adapter tensor.
 */

import { readFileSync, writeFileSync } from "node:fs";

export class KptwError extends Error {}

export interface KptwHeader {
  vocabSize: number;
  dim: number;
  layers: number;
  heads: number;
  maxCtx: number;
  adapterRank: number;
  adapterAlpha: number;
}

export interface Tensor {
  shape: number[];
  data: Float32Array;
}

export interface KptwFile {
  header: KptwHeader;
  tensors: Map<string, Tensor>;
}

const MAGIC = Buffer.from("KPTW", "ascii");
const VERSION = 1;

export function encodeKptw(file: KptwFile): Buffer {
  const parts: Buffer[] = [];
  const head = Buffer.alloc(33);
  MAGIC.copy(head, 0);
  head.writeUInt8(VERSION, 4);
  const h = file.header;
  head.writeUInt32LE(h.vocabSize, 5);
  head.writeUInt32LE(h.dim, 9);
  head.writeUInt32LE(h.layers, 13);
  head.writeUInt32LE(h.heads, 17);
  head.writeUInt32LE(h.maxCtx, 21);
  head.writeUInt32LE(h.adapterRank, 25);
  head.writeFloatLE(h.adapterAlpha, 29);
  parts.push(head);
  for (const [name, t] of file.tensors) {
    const nameBytes = Buffer.from(name, "utf-8");
    const rec = Buffer.alloc(2 + nameBytes.length + 1 + 4 * t.shape.length);
    rec.writeUInt16LE(nameBytes.length, 0);
    nameBytes.copy(rec, 2);
    let off = 2 + nameBytes.length;
    rec.writeUInt8(t.shape.length, off);
    off += 1;
    let count = 1;
    for (const d of t.shape) {
      rec.writeUInt32LE(d, off);
      off += 4;
      count *= d;
    }
    if (count !== t.data.length) {
      throw new KptwError(`tensor ${name}: shape ${t.shape} does not match ${t.data.length} values`);
    }
    parts.push(rec);
    const data = Buffer.alloc(4 * t.data.length);
    for (let i = 0; i < t.data.length; i++) data.writeFloatLE(t.data[i], 4 * i);
    parts.push(data);
  }
  return Buffer.concat(parts);
}

export function writeKptw(path: string, file: KptwFile): void {
  writeFileSync(path, encodeKptw(file));
}

export function decodeKptw(buf: Buffer): KptwFile {
  if (buf.length < 33 || !buf.subarray(0, 4).equals(MAGIC)) {
    throw new KptwError("not a KPTW file");
  }
  if (buf.readUInt8(4) !== VERSION) {
    throw new KptwError(`unsupported version ${buf.readUInt8(4)}`);
  }
  const header: KptwHeader = {
    vocabSize: buf.readUInt32LE(5),
    dim: buf.readUInt32LE(9),
    layers: buf.readUInt32LE(13),
    heads: buf.readUInt32LE(17),
    maxCtx: buf.readUInt32LE(21),
    adapterRank: buf.readUInt32LE(25),
    adapterAlpha: buf.readFloatLE(29),
  };
  const tensors = new Map<string, Tensor>();
  let off = 33;
  while (off < buf.length) {
    if (off + 2 > buf.length) throw new KptwError("truncated record header");
    const nameLen = buf.readUInt16LE(off);
    off += 2;
    if (off + nameLen + 1 > buf.length) throw new KptwError("truncated record name");
    const name = buf.toString("utf-8", off, off + nameLen);
    off += nameLen;
    const ndim = buf.readUInt8(off);
    off += 1;
    if (off + 4 * ndim > buf.length) throw new KptwError(`truncated dims for ${name}`);
    const shape: number[] = [];
    let count = 1;
    for (let i = 0; i < ndim; i++) {
      const d = buf.readUInt32LE(off);
      off += 4;
      shape.push(d);
      count *= d;
    }
    if (off + 4 * count > buf.length) throw new KptwError(`truncated data for ${name}`);
    const data = new Float32Array(count);
    for (let i = 0; i < count; i++) data[i] = buf.readFloatLE(off + 4 * i);
    off += 4 * count;
    if (tensors.has(name)) throw new KptwError(`duplicate tensor ${name}`);
    tensors.set(name, { shape, data });
  }
  return { header, tensors };
}

export function readKptw(path: string): KptwFile {
  return decodeKptw(readFileSync(path));
}
