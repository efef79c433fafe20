/**
 * Named-array container codec (little-endian), the wire format of the
 * `msc ffi` subcommands:
 *
 *   magic "MSCA" | u32 abi | u32 count | entries of
 *     u16 nameLen | name utf-8 | u8 dtype | u8 ndim | u64 dims... | payload
 *
 * dtype codes: 0 f64, 1 f32, 2 i64, 3 u8, 4 u32.
 */

export const ABI_VERSION = 1;

const MAGIC = Buffer.from("MSCA", "ascii");

export type ArrayData =
  | Float64Array
  | Float32Array
  | BigInt64Array
  | Uint8Array
  | Uint32Array;

export interface NamedArray {
  data: ArrayData;
  shape: number[];
}

const DTYPE_OF = new Map<Function, number>([
  [Float64Array, 0],
  [Float32Array, 1],
  [BigInt64Array, 2],
  [Uint8Array, 3],
  [Uint32Array, 4],
]);

function makeArray(code: number, buf: Buffer, offset: number, length: number): ArrayData {
  // slice to get an aligned, standalone view over the response bytes
  const bytesPer = code === 0 || code === 2 ? 8 : code === 1 || code === 4 ? 4 : 1;
  const section = buf.subarray(offset, offset + length * bytesPer);
  const aligned = new Uint8Array(section.byteLength);
  aligned.set(section);
  switch (code) {
    case 0:
      return new Float64Array(aligned.buffer, 0, length);
    case 1:
      return new Float32Array(aligned.buffer, 0, length);
    case 2:
      return new BigInt64Array(aligned.buffer, 0, length);
    case 3:
      return new Uint8Array(aligned.buffer, 0, length);
    case 4:
      return new Uint32Array(aligned.buffer, 0, length);
    default:
      throw new Error(`unknown dtype code ${code}`);
  }
}

export function packArrays(arrays: Record<string, NamedArray>): Buffer {
  const parts: Buffer[] = [];
  const names = Object.keys(arrays);
  const head = Buffer.alloc(12);
  MAGIC.copy(head, 0);
  head.writeUInt32LE(ABI_VERSION, 4);
  head.writeUInt32LE(names.length, 8);
  parts.push(head);
  for (const name of names) {
    const { data, shape } = arrays[name];
    const code = DTYPE_OF.get(data.constructor as Function);
    if (code === undefined) throw new Error(`${name}: unsupported typed array`);
    const size = shape.reduce((a, b) => a * b, 1);
    if (size !== data.length) throw new Error(`${name}: shape/product mismatch`);
    const nameBuf = Buffer.from(name, "utf-8");
    const meta = Buffer.alloc(2 + nameBuf.length + 2 + 8 * shape.length);
    meta.writeUInt16LE(nameBuf.length, 0);
    nameBuf.copy(meta, 2);
    meta.writeUInt8(code, 2 + nameBuf.length);
    meta.writeUInt8(shape.length, 3 + nameBuf.length);
    shape.forEach((d, i) =>
      meta.writeBigUInt64LE(BigInt(d), 4 + nameBuf.length + 8 * i)
    );
    parts.push(meta);
    parts.push(Buffer.from(data.buffer, data.byteOffset, data.byteLength));
  }
  return Buffer.concat(parts);
}

export function unpackArrays(buf: Buffer): Record<string, NamedArray> {
  if (!buf.subarray(0, 4).equals(MAGIC)) throw new Error("bad container magic");
  const abi = buf.readUInt32LE(4);
  if (abi !== ABI_VERSION) throw new Error(`ABI mismatch: got ${abi}, expected ${ABI_VERSION}`);
  const count = buf.readUInt32LE(8);
  let off = 12;
  const out: Record<string, NamedArray> = {};
  for (let k = 0; k < count; k++) {
    const nameLen = buf.readUInt16LE(off);
    off += 2;
    const name = buf.subarray(off, off + nameLen).toString("utf-8");
    off += nameLen;
    const code = buf.readUInt8(off);
    const ndim = buf.readUInt8(off + 1);
    off += 2;
    const shape: number[] = [];
    for (let d = 0; d < ndim; d++) {
      shape.push(Number(buf.readBigUInt64LE(off)));
      off += 8;
    }
    const size = shape.reduce((a, b) => a * b, 1);
    const data = makeArray(code, buf, off, size);
    off += data.byteLength;
    out[name] = { data, shape };
  }
  return out;
}
