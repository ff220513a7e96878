import { WorkbenchClient } from "./api.js";
import { buildOverlays, drawOverlays, hitTest, type OverlayModel } from "./overlay.js";
import { renderMatrix } from "./matrix.js";
import { classColorCss } from "./palette.js";
import { PromptController } from "./prompts.js";
import type { ImageLoadResponse, MatchResponse, PromptEntry, TemplateFields } from "./types.js";

const client = new WorkbenchClient("");

interface AppState {
  sessionId: string | null;
  image: string | null;
  loaded: ImageLoadResponse | null;
  match: MatchResponse | null;
  overlays: OverlayModel[];
  selectedMask: string | null;
}

const state: AppState = {
  sessionId: null,
  image: null,
  loaded: null,
  match: null,
  overlays: [],
  selectedMask: null,
};

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) {
    throw new Error(`missing element #${id}`);
  }
  return node as T;
}

const statusLine = () => el<HTMLElement>("status");

function setStatus(message: string | null, isError = false): void {
  statusLine().textContent = message ?? "";
  statusLine().classList.toggle("error", isError);
}

function setPending(pending: boolean): void {
  el("prompt-panel").classList.toggle("pending", pending);
  el<HTMLElement>("spinner").style.visibility = pending ? "visible" : "hidden";
}

const controller = new PromptController({
  putPrompts: (prompts: PromptEntry[]) => {
    if (!state.sessionId) {
      return Promise.reject(new Error("no session"));
    }
    return client.putPrompts(state.sessionId, prompts);
  },
  renderPrompt: (fields: TemplateFields) => client.renderPrompt(fields),
  onMatches: (response) => {
    const current = response.matches.find((m) => m.image === state.image);
    if (current) {
      applyMatch(current);
    }
    refreshPromptErrors();
  },
  onPending: setPending,
  onError: (message) => {
    setStatus(message, message !== null);
    refreshPromptErrors();
  },
});

function applyMatch(match: MatchResponse): void {
  state.match = match;
  if (state.loaded) {
    state.overlays = buildOverlays(state.loaded.masks, match.assignments);
  }
  renderMatrix(el("matrix-panel"), match, {
    onCellClick: (segmentId) => {
      state.selectedMask = segmentId;
      redrawCanvas();
    },
  });
  redrawCanvas();
}

function redrawCanvas(): void {
  const canvas = el<HTMLCanvasElement>("scene");
  const ctx = canvas.getContext("2d");
  if (!ctx || !state.loaded || !state.sessionId || !state.image) {
    return;
  }
  canvas.width = state.loaded.width;
  canvas.height = state.loaded.height;
  const photo = new Image();
  photo.onload = () => {
    ctx.drawImage(photo, 0, 0);
    drawOverlays(ctx, state.overlays, state.selectedMask);
  };
  photo.src = `/sessions/${state.sessionId}/images/${encodeURIComponent(state.image)}/file`;
}

function refreshPromptErrors(): void {
  const rows = controller.snapshot();
  document.querySelectorAll<HTMLElement>(".prompt-error").forEach((node, index) => {
    node.textContent = rows[index]?.error ?? "";
  });
}

function fieldInput(
  placeholder: string,
  value: string,
  onInput: (value: string) => void,
): HTMLInputElement {
  const input = document.createElement("input");
  input.placeholder = placeholder;
  input.value = value;
  input.addEventListener("input", () => onInput(input.value));
  return input;
}

function renderPromptTable(): void {
  const panel = el("prompt-rows");
  panel.textContent = "";
  controller.snapshot().forEach((row, index) => {
    const wrapper = document.createElement("div");
    wrapper.className = "prompt-row";
    wrapper.style.borderLeft = `6px solid ${classColorCss(index)}`;

    const label = fieldInput("label", row.label, (value) =>
      controller.editLabel(index, value),
    );
    label.className = "prompt-label";

    const description = fieldInput("description", row.description, (value) =>
      controller.editDescription(index, value),
    );
    description.className = "prompt-description";

    const fields: TemplateFields = { object: "", ...(row.fields ?? {}) };
    const template = document.createElement("div");
    template.className = "template-fields";
    (["color", "shape", "object", "feature"] as const).forEach((key) => {
      template.appendChild(
        fieldInput(key, (fields[key] as string | undefined) ?? "", (value) => {
          fields[key] = value;
          void controller.editTemplateFields(index, { ...fields }).then(() => {
            const snapshot = controller.snapshot()[index];
            if (snapshot) {
              description.value = snapshot.description;
            }
            refreshPromptErrors();
          });
        }),
      );
    });

    const exportBox = document.createElement("input");
    exportBox.type = "checkbox";
    exportBox.checked = row.export;
    exportBox.addEventListener("change", () =>
      controller.toggleExport(index, exportBox.checked),
    );
    const exportLabel = document.createElement("label");
    exportLabel.append(exportBox, " export");

    const remove = document.createElement("button");
    remove.textContent = "remove";
    remove.addEventListener("click", () => {
      controller.removeRow(index);
      renderPromptTable();
    });

    const error = document.createElement("span");
    error.className = "prompt-error";
    error.textContent = row.error ?? "";

    wrapper.append(label, description, template, exportLabel, remove, error);
    panel.appendChild(wrapper);
  });
}

async function loadImage(): Promise<void> {
  const name = el<HTMLInputElement>("image-name").value.trim();
  if (!name || !state.sessionId) {
    setStatus("enter an image file name first", true);
    return;
  }
  setStatus(`loading ${name} ...`);
  try {
    state.loaded = await client.loadImage(state.sessionId, name);
    state.image = name;
    state.selectedMask = null;
    const match = await client.getMatch(state.sessionId, name);
    applyMatch(match);
    setStatus(`${name}: ${state.loaded.masks.length} masks`);
  } catch (error) {
    setStatus(error instanceof Error ? error.message : String(error), true);
  }
}

async function exportSession(): Promise<void> {
  if (!state.sessionId) {
    return;
  }
  try {
    const result = await client.exportSession(state.sessionId, ["coco"]);
    setStatus(`exported: ${Object.values(result.paths).join(", ")}`);
  } catch (error) {
    setStatus(error instanceof Error ? error.message : String(error), true);
  }
}

async function bootstrap(): Promise<void> {
  const session = await client.createSession();
  state.sessionId = session.id;
  el<HTMLAnchorElement>("promptset-link").href = client.promptsetUrl(session.id);

  controller.load(await client.getPromptset(session.id));
  renderPromptTable();

  el("load-button").addEventListener("click", () => void loadImage());
  el("export-button").addEventListener("click", () => void exportSession());
  el("add-prompt").addEventListener("click", () => {
    controller.addRow({ label: "", description: "", export: true });
    renderPromptTable();
  });
  el<HTMLCanvasElement>("scene").addEventListener("click", (event) => {
    const canvas = el<HTMLCanvasElement>("scene");
    const rect = canvas.getBoundingClientRect();
    const x = ((event.clientX - rect.left) / rect.width) * canvas.width;
    const y = ((event.clientY - rect.top) / rect.height) * canvas.height;
    const hit = hitTest(state.overlays, x, y);
    state.selectedMask = hit ? hit.maskId : null;
    redrawCanvas();
  });
  setStatus("session ready");
}

void bootstrap();
