/**
 * Next-token cross-entropy training over a token corpus.
 *
 * Chunks are sampled whole (they are short by construction), the batch
 * gradient is the mean over all predicted positions, and Adam with a
 * linear learning-rate decay takes the step. Every run is a pure
 * function of (config, corpus bytes): the PRNG covers init and batch
 * sampling, and no wall-clock or platform state leaks in.
 */

import { Corpus } from "./corpus";
import { Model, ModelDims, effectiveWeights, evalBitsPerToken, seqForwardBackward } from "./model";
import { Rng } from "./rng";
import { zeros } from "./tensor";
import { TrainConfig } from "./config";

export class ConfigError extends Error {}

export interface TrainLogEntry {
  step: number;
  lr: number;
  /** Batch loss, bits per token. */
  loss: number;
  /** Held-out bits per token; only on eval steps. */
  heldOut?: number;
}

export interface TrainResult {
  model: Model;
  log: TrainLogEntry[];
  /** Final bits/token on the held-out chunks (= train set when unsplit). */
  heldOutBits: number;
  heldOutChunks: number;
  trainChunks: number;
  counts: { total: number; adapters: number; trainable: number };
  /** adapters / total; 0 when adapter_rank is 0. */
  trainableFraction: number;
}

const ADAM_B1 = 0.9;
const ADAM_B2 = 0.999;
const ADAM_EPS = 1e-8;
const CLIP_NORM = 1.0;
/** Cap on chunks scored during mid-run evals; the final eval is full. */
const EVAL_CAP = 64;

export function resolveDims(cfg: TrainConfig, corpus: Corpus): ModelDims {
  if (cfg.vocab_size !== undefined && cfg.vocab_size !== corpus.vocab) {
    throw new ConfigError(
      `config vocab_size ${cfg.vocab_size} does not match corpus vocab ${corpus.vocab}`,
    );
  }
  const maxCtx = cfg.max_ctx ?? corpus.maxChunkLen + 2;
  let longest = 0;
  for (const c of corpus.chunks) if (c.length > longest) longest = c.length;
  if (longest > maxCtx) {
    throw new ConfigError(
      `corpus has a ${longest}-token chunk but max_ctx is ${maxCtx}; ` +
        `use max_ctx = max_chunk_len + 2`,
    );
  }
  if (maxCtx > 65536) {
    throw new ConfigError(
      `max_ctx ${maxCtx} is unreasonably large; re-export the corpus with a smaller chunk length`,
    );
  }
  return {
    vocab: corpus.vocab,
    dim: cfg.dim,
    layers: cfg.layers,
    heads: cfg.heads,
    maxCtx,
    adapterRank: cfg.adapter_rank,
    adapterAlpha: cfg.adapter_alpha,
  };
}

export function train(
  cfg: TrainConfig,
  corpus: Corpus,
  onLog?: (e: TrainLogEntry) => void,
): TrainResult {
  const dims = resolveDims(cfg, corpus);
  const rng = new Rng(cfg.seed);
  const model = new Model(dims);
  model.initRandom(rng);

  const trainSet: Uint32Array[] = [];
  const heldOut: Uint32Array[] = [];
  if (cfg.holdout_every > 0) {
    corpus.chunks.forEach((c, i) => {
      (i % cfg.holdout_every === cfg.holdout_every - 1 ? heldOut : trainSet).push(c);
    });
  } else {
    trainSet.push(...corpus.chunks);
  }
  if (trainSet.length === 0) throw new ConfigError("no training chunks after split");
  const evalSet = heldOut.length > 0 ? heldOut : trainSet;

  const names = model.trainableNames();
  const grads = new Map<string, Float32Array>();
  const adamM = new Map<string, Float32Array>();
  const adamV = new Map<string, Float32Array>();
  for (const n of names) {
    const len = model.params.get(n)!.length;
    grads.set(n, zeros(len));
    adamM.set(n, zeros(len));
    adamV.set(n, zeros(len));
  }

  const log: TrainLogEntry[] = [];
  const evalEvery = Math.max(1, Math.floor(cfg.steps / 10));
  for (let step = 1; step <= cfg.steps; step++) {
    const batch: Uint32Array[] = [];
    let preds = 0;
    for (let i = 0; i < cfg.batch; i++) {
      const c = trainSet[rng.below(trainSet.length)];
      batch.push(c);
      preds += c.length - 1;
    }
    for (const g of grads.values()) g.fill(0);
    const eff = effectiveWeights(model);
    let nats = 0;
    for (const seq of batch) {
      nats += seqForwardBackward(model, eff, seq, grads, preds).nats;
    }

    let sq = 0;
    for (const g of grads.values()) for (let i = 0; i < g.length; i++) sq += g[i] * g[i];
    const norm = Math.sqrt(sq);
    const clip = norm > CLIP_NORM ? CLIP_NORM / norm : 1;

    const lr = cfg.lr * (1 - (step - 1) / cfg.steps);
    const bc1 = 1 - Math.pow(ADAM_B1, step);
    const bc2 = 1 - Math.pow(ADAM_B2, step);
    for (const n of names) {
      const p = model.params.get(n)!;
      const g = grads.get(n)!;
      const mm = adamM.get(n)!;
      const vv = adamV.get(n)!;
      for (let i = 0; i < p.length; i++) {
        const gi = g[i] * clip;
        mm[i] = ADAM_B1 * mm[i] + (1 - ADAM_B1) * gi;
        vv[i] = ADAM_B2 * vv[i] + (1 - ADAM_B2) * gi * gi;
        p[i] -= (lr * (mm[i] / bc1)) / (Math.sqrt(vv[i] / bc2) + ADAM_EPS);
      }
    }

    const entry: TrainLogEntry = { step, lr, loss: nats / preds / Math.LN2 };
    if (step % evalEvery === 0 || step === cfg.steps) {
      const evalEff = effectiveWeights(model);
      entry.heldOut = evalBitsPerToken(model, evalEff, evalSet.slice(0, EVAL_CAP));
    }
    log.push(entry);
    if (onLog) onLog(entry);
  }

  const finalEff = effectiveWeights(model);
  const heldOutBits = evalBitsPerToken(model, finalEff, evalSet);
  const counts = model.counts();
  return {
    model,
    log,
    heldOutBits,
    heldOutChunks: heldOut.length,
    trainChunks: trainSet.length,
    counts,
    trainableFraction: counts.total > 0 ? counts.adapters / counts.total : 0,
  };
}
