/**
 * Flat Float32Array math kernels.
 *
 * Matrices are row-major. The three matmul flavors cover every product the
 * model needs without ever materializing a transpose:
 *
 *   matmul    out = A (M,K) x B (K,N)
 *   matmulNT  out = A (M,K) x B^T where B is (N,K)
 *   matmulTN  out = A^T x B where A is (K,M), B is (K,N)
 *
 * All three accumulate into `out` when `acc` is true, which is how gradient
 * buffers are built up across a batch.
 */

export function zeros(n: number): Float32Array {
  return new Float32Array(n);
}

export function matmul(
  out: Float32Array,
  a: Float32Array,
  b: Float32Array,
  m: number,
  k: number,
  n: number,
  acc = false,
): void {
  if (!acc) out.fill(0, 0, m * n);
  for (let i = 0; i < m; i++) {
    const ai = i * k;
    const oi = i * n;
    for (let p = 0; p < k; p++) {
      const av = a[ai + p];
      if (av === 0) continue;
      const bp = p * n;
      for (let j = 0; j < n; j++) out[oi + j] += av * b[bp + j];
    }
  }
}

export function matmulNT(
  out: Float32Array,
  a: Float32Array,
  b: Float32Array,
  m: number,
  k: number,
  n: number,
  acc = false,
): void {
  for (let i = 0; i < m; i++) {
    const ai = i * k;
    const oi = i * n;
    for (let j = 0; j < n; j++) {
      const bj = j * k;
      let s = 0;
      for (let p = 0; p < k; p++) s += a[ai + p] * b[bj + p];
      if (acc) out[oi + j] += s;
      else out[oi + j] = s;
    }
  }
}

export function matmulTN(
  out: Float32Array,
  a: Float32Array,
  b: Float32Array,
  k: number,
  m: number,
  n: number,
  acc = false,
): void {
  if (!acc) out.fill(0, 0, m * n);
  for (let p = 0; p < k; p++) {
    const ap = p * m;
    const bp = p * n;
    for (let i = 0; i < m; i++) {
      const av = a[ap + i];
      if (av === 0) continue;
      const oi = i * n;
      for (let j = 0; j < n; j++) out[oi + j] += av * b[bp + j];
    }
  }
}

/** In-place numerically-stable softmax over out[0..n). */
export function softmaxInPlace(out: Float32Array, n: number): void {
  let mx = -Infinity;
  for (let i = 0; i < n; i++) if (out[i] > mx) mx = out[i];
  let sum = 0;
  for (let i = 0; i < n; i++) {
    const e = Math.exp(out[i] - mx);
    out[i] = e;
    sum += e;
  }
  const inv = 1 / sum;
  for (let i = 0; i < n; i++) out[i] *= inv;
}

const GELU_C = 0.7978845608028654; // sqrt(2/pi)
const GELU_A = 0.044715;

/** tanh-approximation GELU, matching the codec's inference engine. */
export function gelu(x: number): number {
  return 0.5 * x * (1 + Math.tanh(GELU_C * (x + GELU_A * x * x * x)));
}

/** d(gelu)/dx for the same tanh approximation. */
export function geluGrad(x: number): number {
  const u = GELU_C * (x + GELU_A * x * x * x);
  const t = Math.tanh(u);
  const du = GELU_C * (1 + 3 * GELU_A * x * x);
  return 0.5 * (1 + t) + 0.5 * x * (1 - t * t) * du;
}
