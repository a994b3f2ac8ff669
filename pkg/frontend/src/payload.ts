/**
 * Decoder for the binary scene payload served by GET /api/scene.
 *
 * Layout: u32 little-endian header length, UTF-8 JSON header, then planar
 * arrays in header-declared order: positions as u16 grid triples
 * (world = origin + grid * voxel_size), colors as u8 RGB triples, and
 * superpoint ids as u32.
 */

export interface ScenePayload {
  count: number;
  positions: Float32Array; // interleaved xyz, world units
  colors: Uint8Array; // interleaved rgb
  superpoints: Uint32Array;
  origin: [number, number, number];
  voxelSize: number;
}

interface PayloadHeader {
  count: number;
  origin: [number, number, number];
  voxel_size: number;
  layout: string[];
  byte_order: string;
}

export function decodeScenePayload(buffer: ArrayBuffer): ScenePayload {
  const view = new DataView(buffer);
  if (buffer.byteLength < 4) {
    throw new Error("scene payload truncated: missing header length");
  }
  const headerLen = view.getUint32(0, true);
  if (4 + headerLen > buffer.byteLength) {
    throw new Error("scene payload truncated: header exceeds buffer");
  }
  const headerText = new TextDecoder().decode(new Uint8Array(buffer, 4, headerLen));
  const header = JSON.parse(headerText) as PayloadHeader;
  const n = header.count;
  const expected = 4 + headerLen + n * (6 + 3 + 4);
  if (buffer.byteLength !== expected) {
    throw new Error(
      `scene payload length ${buffer.byteLength} does not match header-declared ${expected}`,
    );
  }
  let off = 4 + headerLen;
  const grid = new Uint16Array(n * 3);
  for (let i = 0; i < n * 3; i++) {
    grid[i] = view.getUint16(off + i * 2, true);
  }
  off += n * 6;
  const colors = new Uint8Array(buffer, off, n * 3).slice();
  off += n * 3;
  const superpoints = new Uint32Array(n);
  for (let i = 0; i < n; i++) {
    superpoints[i] = view.getUint32(off + i * 4, true);
  }

  const positions = new Float32Array(n * 3);
  const [ox, oy, oz] = header.origin;
  const s = header.voxel_size;
  for (let i = 0; i < n; i++) {
    positions[i * 3] = ox + grid[i * 3] * s;
    positions[i * 3 + 1] = oy + grid[i * 3 + 1] * s;
    positions[i * 3 + 2] = oz + grid[i * 3 + 2] * s;
  }
  return {
    count: n,
    positions,
    colors,
    superpoints,
    origin: header.origin,
    voxelSize: s,
  };
}
