export { Rng } from "./rng";
export { Corpus, CorpusError, loadCorpus, parseCorpus, BOS, EOS, PAD } from "./corpus";
export {
  KptwError,
  KptwFile,
  KptwHeader,
  Tensor,
  decodeKptw,
  encodeKptw,
  readKptw,
  writeKptw,
} from "./kptw";
export {
  ADAPTABLE,
  Model,
  ModelDims,
  ModelError,
  effectiveWeights,
  evalBitsPerToken,
  greedyNext,
  seqForwardBackward,
} from "./model";
export { ConfigError, TrainLogEntry, TrainResult, train, resolveDims } from "./train";
export { ConfigFileError, TrainConfig, defaultConfig, loadConfig, parseConfig } from "./config";
