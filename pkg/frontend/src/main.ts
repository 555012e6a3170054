import { fetchHealth, predictImage, ServiceError } from "./api";
import { resolveServiceUrl } from "./config";
import { bindZoom, renderError, renderResult } from "./render";
import {
  canSubmit,
  fileSelected,
  initialState,
  predictionReceived,
  requestFailed,
  reset,
  submitStarted,
  type UploadState,
} from "./state";
import { validateFile } from "./validate";

export interface AppDeps {
  serviceUrl: string;
  fetchFn?: typeof fetch;
  createPreviewUrl?: (file: File) => string;
  revokePreviewUrl?: (url: string) => void;
  timeoutMs?: number;
}

export interface AppHandle {
  handleFile(file: File): void;
  submit(): Promise<void>;
  clear(): void;
  getState(): UploadState;
}

/**
 * Wire the upload workflow into `root`. The page stays a single task:
 * choose an image, preview it (with zoom), submit, read the color-coded
 * percentages. One prediction is in flight at a time.
 */
export function initApp(root: HTMLElement, deps: AppDeps): AppHandle {
  const fetchFn = deps.fetchFn ?? fetch.bind(globalThis);
  const createPreviewUrl = deps.createPreviewUrl ?? ((f: File) => URL.createObjectURL(f));
  const revokePreviewUrl = deps.revokePreviewUrl ?? ((u: string) => URL.revokeObjectURL(u));

  root.innerHTML = `
    <section class="picker">
      <input type="file" id="file-input" accept=".png,.jpg,.jpeg,.bmp" />
      <p class="hint">PNG, JPG, or BMP up to 10 MiB. The image is analyzed on the server and never stored.</p>
    </section>
    <section class="preview" id="preview-section" hidden>
      <div class="preview-frame"><img id="preview-image" alt="selected ultrasound scan" /></div>
      <label class="zoom">zoom
        <input type="range" id="zoom-slider" min="1" max="4" step="0.1" value="1" />
      </label>
      <div class="actions">
        <button type="button" id="submit-button">Classify</button>
        <button type="button" id="clear-button">Clear</button>
      </div>
    </section>
    <section id="status-line" class="status"></section>
    <section id="result-section"></section>
  `;

  const fileInput = root.querySelector<HTMLInputElement>("#file-input")!;
  const previewSection = root.querySelector<HTMLElement>("#preview-section")!;
  const previewImage = root.querySelector<HTMLImageElement>("#preview-image")!;
  const zoomSlider = root.querySelector<HTMLInputElement>("#zoom-slider")!;
  const submitButton = root.querySelector<HTMLButtonElement>("#submit-button")!;
  const clearButton = root.querySelector<HTMLButtonElement>("#clear-button")!;
  const statusLine = root.querySelector<HTMLElement>("#status-line")!;
  const resultSection = root.querySelector<HTMLElement>("#result-section")!;

  bindZoom(previewImage, zoomSlider);

  let state: UploadState = initialState;
  let selectedFile: File | null = null;

  function render(): void {
    previewSection.hidden = state.previewUrl === null;
    if (state.previewUrl) {
      previewImage.src = state.previewUrl;
    }
    submitButton.disabled = state.phase === "uploading" || !canSubmit(state);
    statusLine.textContent =
      state.phase === "uploading" ? "Classifying…" : state.phase === "selected" ? "Ready." : "";
    if (state.phase === "predicted" && state.result) {
      renderResult(resultSection, state.result);
    } else if (state.phase === "error" && state.error) {
      renderError(resultSection, state.error, state.canRetry ? () => void submit() : null);
    } else {
      resultSection.innerHTML = "";
    }
  }

  function dropPreview(): void {
    if (state.previewUrl) {
      revokePreviewUrl(state.previewUrl);
    }
  }

  function handleFile(file: File): void {
    const validationError = validateFile(file);
    dropPreview();
    if (validationError) {
      selectedFile = null;
      state = fileSelected(file, null, validationError);
    } else {
      selectedFile = file;
      state = fileSelected(
        { name: file.name, size: file.size, type: file.type },
        createPreviewUrl(file),
        null,
      );
      zoomSlider.value = "1";
      previewImage.style.transform = "scale(1)";
    }
    render();
  }

  async function submit(): Promise<void> {
    if (!canSubmit(state) || selectedFile === null) {
      return;
    }
    state = submitStarted(state);
    render();
    try {
      const result = await predictImage(selectedFile, deps.serviceUrl, deps.timeoutMs, fetchFn);
      state = predictionReceived(state, result);
    } catch (err) {
      const message = err instanceof ServiceError ? err.message : "Unexpected error.";
      state = requestFailed(state, message);
    }
    render();
  }

  function clear(): void {
    dropPreview();
    selectedFile = null;
    state = reset();
    fileInput.value = "";
    render();
  }

  fileInput.addEventListener("change", () => {
    const file = fileInput.files?.[0];
    if (file) handleFile(file);
  });
  submitButton.addEventListener("click", () => void submit());
  clearButton.addEventListener("click", clear);

  render();
  return { handleFile, submit, clear, getState: () => state };
}

async function boot(): Promise<void> {
  const root = document.getElementById("app");
  if (!root) return;
  const serviceUrl = await resolveServiceUrl();
  initApp(root, { serviceUrl });
  const badge = document.getElementById("service-status");
  if (badge) {
    try {
      const health = await fetchHealth(serviceUrl);
      badge.textContent = `service ${health.status} · model ${health.model_version}`;
    } catch {
      badge.textContent = "service unreachable";
    }
  }
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  void boot();
}
