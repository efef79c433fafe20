/**
 * Bindings to the msc point-cloud pre-training pipeline.
 *
 * Everything is computed by the native `msc` CLI; this package only
 * marshals flat arrays over the versioned container protocol, so results
 * are byte-identical to the native paths under equal seeds.
 *
 * Buffer lifetime contract: the typed arrays returned by `generatePair`
 * and `losses` are views over the context's current response arena and
 * stay valid only until the next call on the same context — copy what you
 * keep. Contexts are not shareable across threads; create one per worker.
 */

import { spawnSync } from "node:child_process";

import { ABI_VERSION, NamedArray, packArrays, unpackArrays } from "./container.js";

export { ABI_VERSION, packArrays, unpackArrays } from "./container.js";
export { packMscb, unpackMscb } from "./mscb.js";
export type { NamedArray } from "./container.js";

export interface ContextOptions {
  /** Command used to reach the native CLI; default `msc`. */
  cli?: string[];
  /** Flat `key = value` configuration text applied to generatePair. */
  configText?: string;
}

export interface PairDescriptors {
  qPos: Float64Array;
  qCol: Float64Array;
  qOrig: Float64Array;
  kPos: Float64Array;
  kCol: Float64Array;
  kOrig: Float64Array;
  /** (n', 2) matched (query, key) row indices. */
  pairs: BigInt64Array;
  maskQ: Uint8Array;
  maskK: Uint8Array;
  qIndex: BigInt64Array;
  kIndex: BigInt64Array;
  nQuery: number;
  nKey: number;
  nPairs: number;
  /** Raw named arrays of the response (same buffers as above). */
  raw: Record<string, NamedArray>;
}

export interface LossRequest {
  fq: NamedArray;
  fk: NamedArray;
  pairs: NamedArray;
  maskQ: Uint8Array;
  maskK: Uint8Array;
  colorTargetQ: NamedArray;
  colorTargetK: NamedArray;
  normalTargetQ: NamedArray;
  normalTargetK: NamedArray;
  colorW: NamedArray;
  colorB: Float64Array;
  normalW: NamedArray;
  normalB: Float64Array;
  tau?: number;
  lambdaC?: number;
  lambdaN?: number;
  validQ?: Uint8Array;
  validK?: Uint8Array;
}

export interface LossResults {
  lNce: number;
  lColor: number;
  lNormal: number;
  lTotal: number;
  nPairs: number;
  dFq: NamedArray;
  dFk: NamedArray;
  dColorW: NamedArray;
  dColorB: NamedArray;
  dNormalW: NamedArray;
  dNormalB: NamedArray;
  raw: Record<string, NamedArray>;
}

export class MscContext {
  private cli: string[];
  private configText?: string;
  private arena: Record<string, NamedArray> | null = null;

  constructor(opts: ContextOptions = {}) {
    this.cli = opts.cli ?? ["msc"];
    this.configText = opts.configText;
    const native = this.abiVersion();
    if (native !== ABI_VERSION) {
      throw new Error(`ABI mismatch: native ${native}, bindings ${ABI_VERSION}`);
    }
  }

  private run(args: string[], input?: Buffer): Buffer {
    const [cmd, ...pre] = this.cli;
    const proc = spawnSync(cmd, [...pre, ...args], {
      input,
      maxBuffer: 1 << 30,
    });
    if (proc.error) throw proc.error;
    if (proc.status !== 0) {
      throw new Error(
        `msc ${args.join(" ")} failed (${proc.status}): ${proc.stderr?.toString().slice(-500)}`
      );
    }
    return proc.stdout as Buffer;
  }

  abiVersion(): number {
    return parseInt(this.run(["ffi", "abi-version"]).toString("utf-8").trim(), 10);
  }

  /** Two augmented views + masks + matches of one scene, seed-addressed. */
  generatePair(
    positions: Float64Array,
    colors: Float64Array,
    seed: number,
    normals?: Float64Array
  ): PairDescriptors {
    const n = positions.length / 3;
    const req: Record<string, NamedArray> = {
      positions: { data: positions, shape: [n, 3] },
      colors: { data: colors, shape: [n, 3] },
      seed: { data: BigInt64Array.from([BigInt(seed)]), shape: [1] },
    };
    if (normals) req.normals = { data: normals, shape: [n, 3] };
    if (this.configText !== undefined) {
      req.config = {
        data: new Uint8Array(Buffer.from(this.configText, "utf-8")),
        shape: [Buffer.byteLength(this.configText, "utf-8")],
      };
    }
    const resp = unpackArrays(this.run(["ffi", "generate-pair"], packArrays(req)));
    this.arena = resp;
    return {
      qPos: resp.q_pos.data as Float64Array,
      qCol: resp.q_col.data as Float64Array,
      qOrig: resp.q_orig.data as Float64Array,
      kPos: resp.k_pos.data as Float64Array,
      kCol: resp.k_col.data as Float64Array,
      kOrig: resp.k_orig.data as Float64Array,
      pairs: resp.pairs.data as BigInt64Array,
      maskQ: resp.mask_q.data as Uint8Array,
      maskK: resp.mask_k.data as Uint8Array,
      qIndex: resp.q_index.data as BigInt64Array,
      kIndex: resp.k_index.data as BigInt64Array,
      nQuery: resp.q_pos.shape[0],
      nKey: resp.k_pos.shape[0],
      nPairs: resp.pairs.shape[0],
      raw: resp,
    };
  }

  /** Combined objective + gradients on caller-supplied features. */
  losses(req: LossRequest): LossResults {
    const arrays: Record<string, NamedArray> = {
      fq: req.fq,
      fk: req.fk,
      pairs: req.pairs,
      mask_q: { data: req.maskQ, shape: [req.maskQ.length] },
      mask_k: { data: req.maskK, shape: [req.maskK.length] },
      color_t_q: req.colorTargetQ,
      color_t_k: req.colorTargetK,
      normal_t_q: req.normalTargetQ,
      normal_t_k: req.normalTargetK,
      color_w: req.colorW,
      color_b: { data: req.colorB, shape: [3] },
      normal_w: req.normalW,
      normal_b: { data: req.normalB, shape: [3] },
      tau: { data: Float64Array.from([req.tau ?? 0.4]), shape: [1] },
      lambda_c: { data: Float64Array.from([req.lambdaC ?? 1.0]), shape: [1] },
      lambda_n: { data: Float64Array.from([req.lambdaN ?? 1.0]), shape: [1] },
    };
    if (req.validQ) arrays.valid_q = { data: req.validQ, shape: [req.validQ.length] };
    if (req.validK) arrays.valid_k = { data: req.validK, shape: [req.validK.length] };
    const resp = unpackArrays(this.run(["ffi", "losses"], packArrays(arrays)));
    this.arena = resp;
    return {
      lNce: (resp.l_nce.data as Float64Array)[0],
      lColor: (resp.l_color.data as Float64Array)[0],
      lNormal: (resp.l_normal.data as Float64Array)[0],
      lTotal: (resp.l_total.data as Float64Array)[0],
      nPairs: Number((resp.n_pairs.data as BigInt64Array)[0]),
      dFq: resp.d_fq,
      dFk: resp.d_fk,
      dColorW: resp.d_color_w,
      dColorB: resp.d_color_b,
      dNormalW: resp.d_normal_w,
      dNormalB: resp.d_normal_b,
      raw: resp,
    };
  }

  /** Raw ffi op passthrough for testing transport parity. */
  rawOp(op: "generate-pair" | "losses", request: Buffer): Buffer {
    return this.run(["ffi", op], request);
  }
}
