import { describe, expect, it } from "vitest";

import { decodeScenePayload } from "../src/payload";

function buildPayload(
  count: number,
  origin: [number, number, number],
  voxel: number,
  grid: number[],
  colors: number[],
  superpoints: number[],
  opts: { truncate?: number; lieAboutCount?: number } = {},
): ArrayBuffer {
  const header = JSON.stringify({
    count: opts.lieAboutCount ?? count,
    origin,
    voxel_size: voxel,
    layout: ["position:u16x3", "color:u8x3", "superpoint:u32"],
    byte_order: "little",
  });
  const headerBytes = new TextEncoder().encode(header);
  const total = 4 + headerBytes.length + count * 13;
  const buf = new ArrayBuffer(total);
  const view = new DataView(buf);
  view.setUint32(0, headerBytes.length, true);
  new Uint8Array(buf, 4, headerBytes.length).set(headerBytes);
  let off = 4 + headerBytes.length;
  grid.forEach((g, i) => view.setUint16(off + i * 2, g, true));
  off += count * 6;
  colors.forEach((c, i) => view.setUint8(off + i, c));
  off += count * 3;
  superpoints.forEach((s, i) => view.setUint32(off + i * 4, s, true));
  return opts.truncate ? buf.slice(0, total - opts.truncate) : buf;
}

describe("decodeScenePayload", () => {
  it("reconstructs positions from grid coordinates", () => {
    const buf = buildPayload(
      2,
      [1.0, 2.0, 3.0],
      0.01,
      [0, 0, 0, 100, 200, 300],
      [255, 0, 0, 0, 0, 255],
      [0, 7],
    );
    const scene = decodeScenePayload(buf);
    expect(scene.count).toBe(2);
    expect([...scene.positions.slice(0, 3)]).toEqual([1.0, 2.0, 3.0]);
    expect(scene.positions[3]).toBeCloseTo(2.0, 6);
    expect(scene.positions[4]).toBeCloseTo(4.0, 6);
    expect(scene.positions[5]).toBeCloseTo(6.0, 6);
    expect([...scene.colors]).toEqual([255, 0, 0, 0, 0, 255]);
    expect([...scene.superpoints]).toEqual([0, 7]);
  });

  it("decodes an empty scene without crashing", () => {
    const scene = decodeScenePayload(buildPayload(0, [0, 0, 0], 0.01, [], [], []));
    expect(scene.count).toBe(0);
    expect(scene.positions.length).toBe(0);
  });

  it("rejects a payload whose length disagrees with the header count", () => {
    const lying = buildPayload(2, [0, 0, 0], 0.01, [0, 0, 0, 1, 1, 1], [0, 0, 0, 0, 0, 0], [0, 1], {
      lieAboutCount: 3,
    });
    expect(() => decodeScenePayload(lying)).toThrow(/does not match/);
  });

  it("rejects truncated payloads", () => {
    const truncated = buildPayload(
      2,
      [0, 0, 0],
      0.01,
      [0, 0, 0, 1, 1, 1],
      [0, 0, 0, 0, 0, 0],
      [0, 1],
      { truncate: 4 },
    );
    expect(() => decodeScenePayload(truncated)).toThrow();
  });
});
