/**
 * Minimal mscb point-cloud file codec (little-endian):
 *   "MSCB" | u32 version=1 | u64 n | u8 flags (bit0 normals) |
 *   f64 positions n*3 | f64 colors n*3 | [f64 normals n*3] | u32 origin n
 */

const MAGIC = Buffer.from("MSCB", "ascii");

export interface Mscb {
  positions: Float64Array; // n*3
  colors: Float64Array; // n*3
  normals?: Float64Array; // n*3
  originIndex: Uint32Array; // n
}

export function packMscb(cloud: {
  positions: Float64Array;
  colors: Float64Array;
  normals?: Float64Array;
}): Buffer {
  const n = cloud.positions.length / 3;
  const head = Buffer.alloc(17);
  MAGIC.copy(head, 0);
  head.writeUInt32LE(1, 4);
  head.writeBigUInt64LE(BigInt(n), 8);
  head.writeUInt8(cloud.normals ? 1 : 0, 16);
  const origin = new Uint32Array(n);
  for (let i = 0; i < n; i++) origin[i] = i;
  const parts = [
    head,
    Buffer.from(cloud.positions.buffer, cloud.positions.byteOffset, n * 24),
    Buffer.from(cloud.colors.buffer, cloud.colors.byteOffset, n * 24),
  ];
  if (cloud.normals) {
    parts.push(Buffer.from(cloud.normals.buffer, cloud.normals.byteOffset, n * 24));
  }
  parts.push(Buffer.from(origin.buffer));
  return Buffer.concat(parts);
}

export function unpackMscb(buf: Buffer): Mscb {
  if (!buf.subarray(0, 4).equals(MAGIC)) throw new Error("bad mscb magic");
  const version = buf.readUInt32LE(4);
  if (version !== 1) throw new Error(`unsupported mscb version ${version}`);
  const n = Number(buf.readBigUInt64LE(8));
  const flags = buf.readUInt8(16);
  let off = 17;

  function f64(count: number): Float64Array {
    const copy = new Uint8Array(buf.subarray(off, off + count * 8));
    off += count * 8;
    return new Float64Array(copy.buffer);
  }

  const positions = f64(n * 3);
  const colors = f64(n * 3);
  const normals = flags & 1 ? f64(n * 3) : undefined;
  const originBytes = new Uint8Array(buf.subarray(off, off + n * 4));
  return { positions, colors, normals, originIndex: new Uint32Array(originBytes.buffer) };
}
