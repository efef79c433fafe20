/**
 * Bindings parity: ffi responses must be byte-identical to the native CLI
 * paths over 20 seeds. The bindings compute nothing; these tests prove the
 * transport (container + subprocess) does not perturb a single byte.
 */

import { execFileSync } from "node:child_process";
import { mkdtempSync, readFileSync, rmSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, describe, expect, it } from "vitest";

import {
  ABI_VERSION,
  MscContext,
  packArrays,
  packMscb,
  unpackArrays,
  unpackMscb,
  NamedArray,
} from "../src/index.js";

const CLI = process.env.MSC_CLI ? process.env.MSC_CLI.split(" ") : ["msc"];

const work = mkdtempSync(join(tmpdir(), "msc-bindings-"));
afterAll(() => rmSync(work, { recursive: true, force: true }));

function cli(args: string[]): void {
  execFileSync(CLI[0], [...CLI.slice(1), ...args], { stdio: ["ignore", "ignore", "pipe"] });
}

/** Deterministic PRNG for building request payloads (inputs only). */
function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

function randomCloud(seed: number, n: number) {
  const rand = mulberry32(seed);
  const positions = new Float64Array(n * 3);
  const colors = new Float64Array(n * 3);
  for (let i = 0; i < n * 3; i++) {
    positions[i] = rand() * 2.0;
    colors[i] = rand();
  }
  return { positions, colors };
}

function bytesEqual(a: NamedArray, b: NamedArray): boolean {
  const ba = Buffer.from(a.data.buffer, a.data.byteOffset, a.data.byteLength);
  const bb = Buffer.from(b.data.buffer, b.data.byteOffset, b.data.byteLength);
  return (
    a.shape.length === b.shape.length &&
    a.shape.every((d, i) => d === b.shape[i]) &&
    ba.equals(bb)
  );
}

describe("abi", () => {
  it("matches at load", () => {
    const ctx = new MscContext({ cli: CLI });
    expect(ctx.abiVersion()).toBe(ABI_VERSION);
  });
});

describe("generate-pair parity with the native viewgen path", () => {
  it("is byte-identical over 20 seeds", () => {
    const ctx = new MscContext({ cli: CLI });
    for (let seed = 0; seed < 20; seed++) {
      const { positions, colors } = randomCloud(seed, 120);
      // native path: write mscb, run `msc viewgen`, read the meta arrays
      const inPath = join(work, `in_${seed}.mscb`);
      writeFileSync(inPath, packMscb({ positions, colors }));
      const outDir = join(work, `views_${seed}`);
      cli(["viewgen", "--in", inPath, "--out", outDir, "--seed", String(seed), "--workers", "1"]);
      const native = unpackArrays(readFileSync(join(outDir, `in_${seed}_meta.msca`)));

      const got = ctx.generatePair(positions, colors, seed);
      for (const key of Object.keys(native)) {
        expect(bytesEqual(got.raw[key], native[key]), `${key} seed ${seed}`).toBe(true);
      }

      // the dumped view files agree with the descriptors too
      const qView = unpackMscb(readFileSync(join(outDir, `in_${seed}_q.mscb`)));
      expect(
        Buffer.from(qView.positions.buffer).equals(
          Buffer.from(got.qPos.buffer, got.qPos.byteOffset, got.qPos.byteLength)
        )
      ).toBe(true);
      // original coords are the source rows the survivors descend from
      for (let i = 0; i < Math.min(10, got.nQuery); i++) {
        const src = Number(got.qIndex[i]);
        for (let c = 0; c < 3; c++) {
          expect(got.qOrig[3 * i + c]).toBe(positions[3 * src + c]);
        }
      }
    }
  }, 120000);
});

function lossRequest(seed: number, n: number, d: number) {
  const rand = mulberry32(1000 + seed);
  const f = (len: number, lo = -1, hi = 1) => {
    const a = new Float64Array(len);
    for (let i = 0; i < len; i++) a[i] = lo + (hi - lo) * rand();
    return a;
  };
  const maskQ = new Uint8Array(n);
  const maskK = new Uint8Array(n);
  for (let i = 0; i < n; i++) {
    maskQ[i] = rand() < 0.3 ? 1 : 0;
    maskK[i] = !maskQ[i] && rand() < 0.3 ? 1 : 0;
  }
  const pairs = new BigInt64Array(2 * n);
  for (let i = 0; i < n; i++) {
    pairs[2 * i] = BigInt(i);
    pairs[2 * i + 1] = BigInt((i * 7 + seed) % n);
  }
  const unit = (len: number) => {
    const a = f(len);
    for (let i = 0; i < len; i += 3) {
      const norm = Math.hypot(a[i], a[i + 1], a[i + 2]) || 1;
      a[i] /= norm;
      a[i + 1] /= norm;
      a[i + 2] /= norm;
    }
    return a;
  };
  return {
    fq: { data: f(n * d, -1, 1.4), shape: [n, d] },
    fk: { data: f(n * d, -1, 1.4), shape: [n, d] },
    pairs: { data: pairs, shape: [n, 2] },
    maskQ,
    maskK,
    colorTargetQ: { data: f(n * 3, 0, 1), shape: [n, 3] },
    colorTargetK: { data: f(n * 3, 0, 1), shape: [n, 3] },
    normalTargetQ: { data: unit(n * 3), shape: [n, 3] },
    normalTargetK: { data: unit(n * 3), shape: [n, 3] },
    colorW: { data: f(d * 3, -0.3, 0.3), shape: [d, 3] },
    colorB: f(3, -0.1, 0.1),
    normalW: { data: f(d * 3, -0.3, 0.3), shape: [d, 3] },
    normalB: f(3, -0.1, 0.1),
  };
}

describe("losses parity", () => {
  it("file and pipe transports return identical bytes over 20 seeds", () => {
    const ctx = new MscContext({ cli: CLI });
    for (let seed = 0; seed < 20; seed++) {
      const req = lossRequest(seed, 12, 6);
      const viaPipe = ctx.losses(req);
      // native file-based CLI path with the identical request bytes
      const reqBuf = packArrays({
        fq: req.fq, fk: req.fk, pairs: req.pairs,
        mask_q: { data: req.maskQ, shape: [12] },
        mask_k: { data: req.maskK, shape: [12] },
        color_t_q: req.colorTargetQ, color_t_k: req.colorTargetK,
        normal_t_q: req.normalTargetQ, normal_t_k: req.normalTargetK,
        color_w: req.colorW, color_b: { data: req.colorB, shape: [3] },
        normal_w: req.normalW, normal_b: { data: req.normalB, shape: [3] },
        tau: { data: Float64Array.from([0.4]), shape: [1] },
        lambda_c: { data: Float64Array.from([1]), shape: [1] },
        lambda_n: { data: Float64Array.from([1]), shape: [1] },
      });
      const reqPath = join(work, `loss_req_${seed}.msca`);
      const respPath = join(work, `loss_resp_${seed}.msca`);
      writeFileSync(reqPath, reqBuf);
      cli(["ffi", "losses", "--in", reqPath, "--out", respPath]);
      const native = unpackArrays(readFileSync(respPath));
      for (const key of Object.keys(native)) {
        expect(bytesEqual(viaPipe.raw[key], native[key]), `${key} seed ${seed}`).toBe(true);
      }
      // 0-ULP equality of the scalars across transports
      expect(viaPipe.lTotal).toBe((native.l_total.data as Float64Array)[0]);
    }
  }, 120000);

  it("single pair gives exactly zero contrastive loss", () => {
    const ctx = new MscContext({ cli: CLI });
    const req = lossRequest(5, 8, 4);
    req.maskQ.fill(0);
    req.maskK.fill(0);
    req.pairs = { data: BigInt64Array.from([0n, 3n]), shape: [1, 2] };
    const out = ctx.losses(req);
    expect(out.lNce).toBe(0);
    expect(out.nPairs).toBe(1);
  });

  it("zero lambdas reduce the total to the contrastive term", () => {
    const ctx = new MscContext({ cli: CLI });
    const req = { ...lossRequest(6, 10, 5), lambdaC: 0, lambdaN: 0 };
    const out = ctx.losses(req);
    expect(out.lTotal).toBe(out.lNce);
  });

  it("is deterministic call over call", () => {
    const ctx = new MscContext({ cli: CLI });
    const req = lossRequest(7, 10, 5);
    const a = ctx.losses(req);
    const dFqA = Buffer.from((a.dFq.data as Float64Array).slice().buffer);
    const b = ctx.losses(req);
    const dFqB = Buffer.from((b.dFq.data as Float64Array).buffer);
    expect(dFqA.equals(dFqB)).toBe(true);
    expect(a.lTotal).toBe(b.lTotal);
  });
});
