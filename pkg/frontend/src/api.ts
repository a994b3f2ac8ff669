/** Typed client for the pipeline serve API. */

import { decodeScenePayload, type ScenePayload } from "./payload";

export interface QueryResponse {
  prompt: string;
  sp_scores: Record<string, number>;
  normalization: { lo: number; hi: number };
}

export interface InstanceRecord {
  id: number;
  size: number;
  score: number;
  point_indices: number[];
}

export interface InstancesResponse {
  prompt: string;
  instances: InstanceRecord[];
}

export interface MetaResponse {
  n_superpoints: number;
  n_points: number;
  voxel_size: number;
  colormap: { low: number[]; high: number[] };
}

export class ApiClient {
  constructor(private base: string = "") {}

  async fetchScene(): Promise<ScenePayload> {
    const resp = await fetch(`${this.base}/api/scene`);
    if (!resp.ok) throw new Error(`scene fetch failed: HTTP ${resp.status}`);
    return decodeScenePayload(await resp.arrayBuffer());
  }

  async fetchMeta(): Promise<MetaResponse> {
    const resp = await fetch(`${this.base}/api/meta`);
    if (!resp.ok) throw new Error(`meta fetch failed: HTTP ${resp.status}`);
    return (await resp.json()) as MetaResponse;
  }

  async query(prompt: string, signal?: AbortSignal): Promise<QueryResponse> {
    const resp = await fetch(`${this.base}/api/query`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ prompt }),
      signal,
    });
    if (!resp.ok) throw new Error(`query failed: HTTP ${resp.status}`);
    return (await resp.json()) as QueryResponse;
  }

  async instances(
    prompt: string,
    params: { threshold?: number; percentile?: number; epsilon?: number; min_cluster_size?: number },
    signal?: AbortSignal,
  ): Promise<InstancesResponse> {
    const resp = await fetch(`${this.base}/api/instances`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ prompt, ...params }),
      signal,
    });
    if (!resp.ok) throw new Error(`instances failed: HTTP ${resp.status}`);
    return (await resp.json()) as InstancesResponse;
  }
}
