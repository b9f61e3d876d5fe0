import { describe, expect, it } from "vitest";
import { decodeKptw, encodeKptw, KptwError, KptwFile } from "../src/kptw";
import { Model } from "../src/model";
import { Rng } from "../src/rng";

function tinyFile(): KptwFile {
  return {
    header: {
      vocabSize: 6,
      dim: 2,
      layers: 1,
      heads: 1,
      maxCtx: 4,
      adapterRank: 0,
      adapterAlpha: 16,
    },
    tensors: new Map([
      ["alpha", { shape: [2, 3], data: Float32Array.from([1, 2, 3, 4, 5, 6]) }],
      ["beta", { shape: [2], data: Float32Array.from([-0.5, 0.25]) }],
    ]),
  };
}

describe("kptw serialization", () => {
  it("matches an independently constructed byte layout", () => {
    const file: KptwFile = {
      header: tinyFile().header,
      tensors: new Map([["w", { shape: [2], data: Float32Array.from([1.5, -2]) }]]),
    };
    // Built by hand from the format definition, not via the writer.
    const expected = Buffer.alloc(33 + 2 + 1 + 1 + 4 + 8);
    expected.write("KPTW", 0, "ascii");
    expected.writeUInt8(1, 4); // version
    expected.writeUInt32LE(6, 5); // vocab
    expected.writeUInt32LE(2, 9); // dim
    expected.writeUInt32LE(1, 13); // layers
    expected.writeUInt32LE(1, 17); // heads
    expected.writeUInt32LE(4, 21); // max_ctx
    expected.writeUInt32LE(0, 25); // adapter_rank
    expected.writeFloatLE(16, 29); // adapter_alpha
    expected.writeUInt16LE(1, 33); // name length
    expected.write("w", 35, "ascii");
    expected.writeUInt8(1, 36); // ndim
    expected.writeUInt32LE(2, 37); // dim 0
    expected.writeFloatLE(1.5, 41);
    expected.writeFloatLE(-2, 45);
    expect(encodeKptw(file).equals(expected)).toBe(true);
  });

  it("round trips header and tensors bit-exactly", () => {
    const file = tinyFile();
    const back = decodeKptw(encodeKptw(file));
    expect(back.header).toEqual(file.header);
    expect([...back.tensors.keys()]).toEqual([...file.tensors.keys()]);
    for (const [name, t] of file.tensors) {
      expect(back.tensors.get(name)!.shape).toEqual(t.shape);
      expect(Array.from(back.tensors.get(name)!.data)).toEqual(Array.from(t.data));
    }
  });

  it("round trips a full model's tensor set", () => {
    const m = new Model({
      vocab: 12,
      dim: 8,
      layers: 2,
      heads: 2,
      maxCtx: 6,
      adapterRank: 2,
      adapterAlpha: 4,
    });
    m.initRandom(new Rng(9));
    const back = decodeKptw(encodeKptw(m.toKptw()));
    expect(back.header.adapterRank).toBe(2);
    expect(back.tensors.size).toBe(m.params.size);
    for (const [name, data] of m.params) {
      expect(Array.from(back.tensors.get(name)!.data)).toEqual(Array.from(data));
    }
  });

  it("rejects bad magic, truncation, and duplicate names", () => {
    const good = encodeKptw(tinyFile());
    const badMagic = Buffer.from(good);
    badMagic.write("XPTW", 0, "ascii");
    expect(() => decodeKptw(badMagic)).toThrow(KptwError);
    expect(() => decodeKptw(good.subarray(0, good.length - 3))).toThrow(/truncated/);
    const dup = tinyFile();
    const doubled = Buffer.concat([
      encodeKptw(dup),
      encodeKptw(dup).subarray(33),
    ]);
    expect(() => decodeKptw(doubled)).toThrow(/duplicate/);
  });
});
