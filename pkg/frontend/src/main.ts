/** App wiring: browse images, view overlays, mark regions, review and
 * confirm prune proposals, undo, and watch the metric update.
 *
 * Every displayed number originates from an API response; mutations wait
 * for server confirmation before the view updates (no optimistic UI).
 */

import { ApiClient, ApiError } from "./api";
import { buildRenderModel, canvasPointToImage, clipToImage, drawOverlay, normalizeDraftRect } from "./overlay";
import { SessionStore } from "./state";
import { LAYER_GROUPS, type ImageRecordJson, type LayerGroup } from "./types";

const api = new ApiClient("");
const store = new SessionStore();

const el = {
  datasets: document.querySelector<HTMLSelectElement>("#datasets")!,
  aogs: document.querySelector<HTMLSelectElement>("#aogs")!,
  openSession: document.querySelector<HTMLButtonElement>("#open-session")!,
  images: document.querySelector<HTMLUListElement>("#images")!,
  tabs: document.querySelector<HTMLDivElement>("#group-tabs")!,
  canvas: document.querySelector<HTMLCanvasElement>("#overlay-canvas")!,
  patterns: document.querySelector<HTMLTableSectionElement>("#pattern-rows")!,
  proposals: document.querySelector<HTMLDivElement>("#proposals")!,
  submitRegions: document.querySelector<HTMLButtonElement>("#submit-regions")!,
  clearRegions: document.querySelector<HTMLButtonElement>("#clear-regions")!,
  confirmPrunes: document.querySelector<HTMLButtonElement>("#confirm-prunes")!,
  undoButton: document.querySelector<HTMLButtonElement>("#undo")!,
  metrics: document.querySelector<HTMLDivElement>("#metrics")!,
  refreshMetrics: document.querySelector<HTMLButtonElement>("#refresh-metrics")!,
  status: document.querySelector<HTMLDivElement>("#status")!,
  error: document.querySelector<HTMLDivElement>("#error")!,
  ruleHint: document.querySelector<HTMLDivElement>("#rule-hint")!,
};

let images: ImageRecordJson[] = [];
let currentImage: string | null = null;
let heatImage: HTMLImageElement | null = null;
const SCALE = 2;

const RULE_HINTS: Record<LayerGroup, string> = {
  low: "low layers: mark regions outside the part box",
  mid: "mid layers: mark regions unrelated to the part",
  high: "high layers: mark background outside the object",
};

function showError(err: unknown): void {
  el.error.textContent = err instanceof ApiError ? `API error ${err.status}: ${err.message}` : String(err);
  el.error.hidden = false;
}

function clearError(): void {
  el.error.hidden = true;
}

function setStatus(text: string): void {
  el.status.textContent = text;
}

async function guarded<T>(work: () => Promise<T>): Promise<T | undefined> {
  clearError();
  try {
    return await work();
  } catch (err) {
    showError(err);
    return undefined;
  }
}

async function loadDatasets(): Promise<void> {
  const body = await guarded(() => api.listDatasets());
  if (!body) return;
  el.datasets.replaceChildren(
    ...body.datasets.map((d) => new Option(`${d.dataset_id} (${d.part_name}, ${d.n_images} images)`, d.dataset_id)),
  );
  const refreshAogs = () => {
    const ds = body.datasets.find((d) => d.dataset_id === el.datasets.value);
    el.aogs.replaceChildren(...(ds?.aogs ?? []).map((name) => new Option(name, name)));
  };
  el.datasets.onchange = refreshAogs;
  refreshAogs();
}

async function openSession(): Promise<void> {
  const body = await guarded(() => api.createSession(el.datasets.value, el.aogs.value));
  if (!body) return;
  store.applySession(body.session);
  store.clearDrafts();
  store.clearProposals();
  const imagesBody = await guarded(() => api.listImages(el.datasets.value));
  if (!imagesBody) return;
  images = imagesBody.images;
  renderImageList();
  renderPatternTable();
  renderProposals();
  setStatus(`session ${body.session.session_id} on ${body.session.manifest}/${body.session.aog}`);
}

function renderImageList(): void {
  el.images.replaceChildren(
    ...images.map((record) => {
      const item = document.createElement("li");
      const link = document.createElement("a");
      link.href = "#";
      link.textContent = `${record.image_id} [${record.split}]`;
      link.onclick = (event) => {
        event.preventDefault();
        void selectImage(record.image_id);
      };
      if (record.image_id === currentImage) item.classList.add("selected");
      item.append(link);
      return item;
    }),
  );
}

async function selectImage(imageId: string): Promise<void> {
  const session = store.state.session;
  if (!session) return;
  currentImage = imageId;
  store.clearDrafts();
  store.clearProposals();
  const parsed = await guarded(() => api.parseImage(session.session_id, imageId));
  if (!parsed) return;
  store.applyParse(parsed.tree);
  await refreshOverlay();
  const descriptor = await guarded(() => api.getSession(session.session_id));
  if (descriptor) store.applySession(descriptor.session);
  renderImageList();
  renderPatternTable();
  renderProposals();
  setStatus(
    `${imageId}: template ${parsed.tree.chosen_template_id}, score ${parsed.tree.total_score}`,
  );
}

async function refreshOverlay(): Promise<void> {
  const session = store.state.session;
  if (!session || !currentImage) return;
  const overlay = await guarded(() => api.overlay(session.session_id, currentImage!, store.state.activeGroup));
  if (!overlay) return;
  store.applyOverlay(store.state.activeGroup, overlay);
  heatImage = new Image();
  heatImage.onload = () => renderCanvas();
  heatImage.src = `data:image/png;base64,${overlay.png_base64}`;
  renderCanvas();
}

function renderCanvas(): void {
  const overlay = store.state.overlays[store.state.activeGroup];
  const ctx = el.canvas.getContext("2d");
  if (!overlay || !ctx) return;
  el.canvas.width = overlay.layout.width_px * SCALE;
  el.canvas.height = overlay.layout.height_px * SCALE;
  const model = buildRenderModel(overlay.layout, store.state.hiddenPatterns);
  drawOverlay(ctx, heatImage, model, store.state.draftRectangles, SCALE);
}

function renderTabs(): void {
  el.tabs.replaceChildren(
    ...LAYER_GROUPS.map((group) => {
      const button = document.createElement("button");
      button.textContent = group;
      button.className = group === store.state.activeGroup ? "tab active" : "tab";
      button.onclick = () => {
        store.state.activeGroup = group;
        el.ruleHint.textContent = RULE_HINTS[group];
        renderTabs();
        void refreshOverlay();
      };
      return button;
    }),
  );
}

function renderPatternTable(): void {
  const rows = store.patternsInGroup(store.state.activeGroup).map((p) => {
    const row = document.createElement("tr");
    if (!p.active) row.classList.add("pruned");
    const toggle = document.createElement("input");
    toggle.type = "checkbox";
    toggle.checked = !store.state.hiddenPatterns.has(p.pattern_id);
    toggle.onchange = () => {
      store.togglePattern(p.pattern_id);
      renderCanvas();
    };
    const cells = [
      p.pattern_id,
      p.template_id,
      p.active ? "active" : "pruned",
      p.contribution === null ? "-" : String(p.contribution),
    ].map((text) => {
      const cell = document.createElement("td");
      cell.textContent = text;
      return cell;
    });
    const toggleCell = document.createElement("td");
    toggleCell.append(toggle);
    row.append(toggleCell, ...cells);
    return row;
  });
  el.patterns.replaceChildren(...rows);
}

function renderProposals(): void {
  if (store.state.proposals.length === 0) {
    el.proposals.replaceChildren("no proposals - mark regions and submit");
    el.confirmPrunes.disabled = true;
    return;
  }
  el.confirmPrunes.disabled = false;
  const list = document.createElement("ul");
  for (const patternId of store.state.proposals) {
    const evidence = store.evidenceFor(patternId);
    const item = document.createElement("li");
    const checkbox = document.createElement("input");
    checkbox.type = "checkbox";
    checkbox.checked = true;
    checkbox.dataset.patternId = patternId;
    const label = document.createElement("span");
    label.textContent = evidence
      ? ` ${patternId} - mass inside ${evidence.inside_mass} vs outside ${evidence.outside_mass} (${evidence.source})`
      : ` ${patternId}`;
    item.append(checkbox, label);
    list.append(item);
  }
  el.proposals.replaceChildren(list);
}

async function submitRegions(): Promise<void> {
  const session = store.state.session;
  if (!session || !currentImage) return;
  if (store.state.draftRectangles.length === 0) {
    showError("draw at least one rectangle first");
    return;
  }
  const request = store.annotateRequest(currentImage);
  const body = await guarded(() =>
    api.annotate(session.session_id, request.image_id, request.rectangles, request.scope),
  );
  if (!body) return;
  store.applyAnnotate(body);
  renderProposals();
  setStatus(`${body.proposals.length} prune proposal(s)`);
}

async function confirmPrunes(): Promise<void> {
  const session = store.state.session;
  if (!session) return;
  const chosen = Array.from(
    el.proposals.querySelectorAll<HTMLInputElement>("input[type=checkbox]:checked"),
  ).map((box) => box.dataset.patternId!);
  if (chosen.length === 0) return;
  const body = await guarded(() => api.prune(session.session_id, chosen));
  if (!body) return;
  store.applySession(body.session);
  store.clearDrafts();
  store.clearProposals();
  if (currentImage) await selectImage(currentImage);
  setStatus(`pruned ${chosen.length} pattern(s); undo depth ${body.session.undo_depth}`);
}

async function undoLast(): Promise<void> {
  const session = store.state.session;
  if (!session || session.undo_depth === 0) return;
  const body = await guarded(() => api.undo(session.session_id, 1));
  if (!body) return;
  store.applySession(body.session);
  if (currentImage) await selectImage(currentImage);
  setStatus(`undid 1 operation; undo depth ${body.session.undo_depth}`);
}

async function refreshMetrics(): Promise<void> {
  const session = store.state.session;
  if (!session) return;
  const body = await guarded(() => api.metrics(session.session_id));
  if (!body) return;
  store.applyMetrics(body.report);
  const panel = store.metricPanel()!;
  el.metrics.textContent = `images: ${panel.count}  mean nd: ${panel.mean_nd}  median nd: ${panel.median_nd}`;
}

function wireCanvasDrawing(): void {
  let dragStart: { x: number; y: number } | null = null;
  el.canvas.onmousedown = (event) => {
    const bounds = el.canvas.getBoundingClientRect();
    dragStart = canvasPointToImage(
      { left: bounds.left, top: bounds.top, scale: SCALE },
      event.clientX,
      event.clientY,
    );
  };
  el.canvas.onmouseup = (event) => {
    if (!dragStart) return;
    const overlay = store.state.overlays[store.state.activeGroup];
    const bounds = el.canvas.getBoundingClientRect();
    const end = canvasPointToImage(
      { left: bounds.left, top: bounds.top, scale: SCALE },
      event.clientX,
      event.clientY,
    );
    const rect = normalizeDraftRect(dragStart.x, dragStart.y, end.x, end.y);
    dragStart = null;
    if (rect.w < 2 || rect.h < 2 || !overlay) return;
    store.addDraft(clipToImage(rect, overlay.layout.width_px, overlay.layout.height_px));
    renderCanvas();
  };
}

el.openSession.onclick = () => void openSession();
el.submitRegions.onclick = () => void submitRegions();
el.clearRegions.onclick = () => {
  store.clearDrafts();
  renderCanvas();
};
el.confirmPrunes.onclick = () => void confirmPrunes();
el.undoButton.onclick = () => void undoLast();
el.refreshMetrics.onclick = () => void refreshMetrics();

renderTabs();
el.ruleHint.textContent = RULE_HINTS[store.state.activeGroup];
void loadDatasets();
