import { severityColor } from "./severity";
import { CLASS_ORDER, type PredictionResult } from "./types";

/**
 * Three percentage bars in fixed order (normal, benign, malignant), the
 * dominant class highlighted in its severity color. Displayed numbers are
 * the service's percent_display values verbatim, to one decimal.
 */
export function renderResult(container: HTMLElement, result: PredictionResult): void {
  container.innerHTML = "";
  const list = document.createElement("div");
  list.className = "result-bars";
  for (const name of CLASS_ORDER) {
    const percent = result.percent_display[name];
    const row = document.createElement("div");
    row.className = "bar-row";
    row.dataset.class = name;
    const dominant = name === result.predicted_label;
    if (dominant) {
      row.classList.add("dominant");
    }

    const label = document.createElement("span");
    label.className = "bar-label";
    label.textContent = name;

    const track = document.createElement("div");
    track.className = "bar-track";
    const fill = document.createElement("div");
    fill.className = "bar-fill";
    fill.style.width = `${Math.max(0, Math.min(100, percent))}%`;
    fill.style.backgroundColor = dominant ? severityColor(result.predicted_label) : "#90a4ae";
    track.appendChild(fill);

    const value = document.createElement("span");
    value.className = "bar-value";
    value.textContent = `${percent.toFixed(1)}%`;

    row.append(label, track, value);
    list.appendChild(row);
  }
  container.appendChild(list);

  const verdict = document.createElement("p");
  verdict.className = "verdict";
  verdict.style.color = severityColor(result.predicted_label);
  verdict.textContent = `${result.predicted_label} — ${result.percent_display[result.predicted_label].toFixed(1)}%`;
  container.appendChild(verdict);

  const meta = document.createElement("p");
  meta.className = "result-meta";
  meta.textContent = `model ${result.model_version} · ${result.elapsed_ms} ms`;
  container.appendChild(meta);
}

export function renderError(
  container: HTMLElement,
  message: string,
  onRetry: (() => void) | null,
): void {
  container.innerHTML = "";
  const box = document.createElement("div");
  box.className = "error-box";
  const text = document.createElement("p");
  text.textContent = message;
  box.appendChild(text);
  if (onRetry) {
    const button = document.createElement("button");
    button.type = "button";
    button.className = "retry-button";
    button.textContent = "Retry";
    button.addEventListener("click", onRetry);
    box.appendChild(button);
  }
  container.appendChild(box);
}

/** Wire a range input to scale the preview image. */
export function bindZoom(img: HTMLImageElement, slider: HTMLInputElement): void {
  const apply = () => {
    img.style.transform = `scale(${slider.value})`;
  };
  slider.addEventListener("input", apply);
  apply();
}
