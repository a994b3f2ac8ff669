import { ApiClient } from "./api";
import { PointRenderer } from "./render";
import { ViewerState } from "./state";

const state = new ViewerState();
const api = new ApiClient("");
let renderer: PointRenderer | null = null;
let inFlight: AbortController | null = null;

const $ = <T extends HTMLElement>(id: string) => document.getElementById(id) as T;

function banner(message: string | null): void {
  const el = $("banner");
  el.textContent = message ?? "";
  el.style.display = message ? "block" : "none";
}

function setStatus(message: string): void {
  $("status").textContent = message;
}

function renderHistory(): void {
  const list = $("history");
  list.innerHTML = "";
  for (const entry of [...state.history].reverse()) {
    const li = document.createElement("li");
    li.textContent = `${entry.prompt} (top ${entry.topScore.toFixed(3)})`;
    li.addEventListener("click", () => {
      ($("prompt") as HTMLInputElement).value = entry.prompt;
      void submitPrompt();
    });
    list.appendChild(li);
  }
}

function renderInstancePanel(): void {
  const panel = $("instances");
  panel.innerHTML = "";
  for (const inst of state.overlayInstances) {
    const li = document.createElement("li");
    li.textContent = `instance ${inst.id}: ${inst.size} pts, score ${inst.score.toFixed(3)}`;
    panel.appendChild(li);
  }
}

function syncThresholdSlider(): void {
  const slider = $("threshold") as HTMLInputElement;
  const range = state.scoreRange();
  slider.min = String(range.min);
  slider.max = String(range.max);
  slider.step = String((range.max - range.min) / 200 || 0.001);
  slider.value = String(state.threshold);
  $("threshold-value").textContent = state.threshold.toFixed(3);
}

async function submitPrompt(): Promise<void> {
  const input = $("prompt") as HTMLInputElement;
  const prompt = input.value.trim();
  if (!prompt) {
    banner("Type a prompt first.");
    return;
  }
  banner(null);
  inFlight?.abort(); // newer submissions cancel the pending query
  inFlight = new AbortController();
  setStatus(`querying "${prompt}"...`);
  try {
    const result = await api.query(prompt, inFlight.signal);
    const colors = state.applyQuery(result);
    // Midpoint of the display window is a sensible starting threshold.
    state.threshold = (result.normalization.lo + result.normalization.hi) / 2;
    renderer?.setColors(colors);
    syncThresholdSlider();
    renderHistory();
    renderInstancePanel();
    setStatus(`"${prompt}": window [${result.normalization.lo.toFixed(3)}, ${result.normalization.hi.toFixed(3)}]`);
  } catch (err) {
    if ((err as Error).name !== "AbortError") banner(`Query failed: ${err}`);
  }
}

async function clusterInstances(): Promise<void> {
  if (!state.activePrompt) {
    banner("Run a query first.");
    return;
  }
  banner(null);
  const epsilon = parseFloat(($("epsilon") as HTMLInputElement).value);
  const minSize = parseInt(($("min-size") as HTMLInputElement).value, 10);
  setStatus("clustering...");
  try {
    const resp = await api.instances(state.activePrompt, {
      threshold: state.threshold,
      epsilon,
      min_cluster_size: minSize,
    });
    const colors = state.applyInstances(resp.instances);
    renderer?.setColors(colors);
    ($("overlay-toggle") as HTMLInputElement).checked = true;
    renderInstancePanel();
    setStatus(`${resp.instances.length} instances`);
  } catch (err) {
    banner(`Clustering failed: ${err}`);
  }
}

async function boot(): Promise<void> {
  try {
    const [meta, scene] = await Promise.all([api.fetchMeta(), api.fetchScene()]);
    if (scene.count !== meta.n_points) {
      banner(`Scene payload count ${scene.count} disagrees with meta ${meta.n_points}.`);
      return;
    }
    state.setScene(scene);
    renderer = new PointRenderer($("canvas") as HTMLCanvasElement);
    renderer.setPoints(scene.positions, scene.colors);
    setStatus(`${scene.count.toLocaleString()} points, ${meta.n_superpoints} superpoints`);
  } catch (err) {
    banner(`Failed to load scene: ${err}`);
  }
}

$("prompt-form").addEventListener("submit", (e) => {
  e.preventDefault();
  void submitPrompt();
});
$("cluster-btn").addEventListener("click", () => void clusterInstances());
($("threshold") as HTMLInputElement).addEventListener("input", (e) => {
  state.threshold = parseFloat((e.target as HTMLInputElement).value);
  $("threshold-value").textContent = state.threshold.toFixed(3);
});
($("overlay-toggle") as HTMLInputElement).addEventListener("change", (e) => {
  const show = (e.target as HTMLInputElement).checked;
  const colors = state.toggleOverlay(show);
  if (colors) renderer?.setColors(colors);
});
window.addEventListener("resize", () => renderer?.draw());

void boot();
