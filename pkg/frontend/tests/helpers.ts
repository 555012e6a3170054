import type { PredictionResult } from "../src/types";

export function makeResult(overrides: Partial<PredictionResult> = {}): PredictionResult {
  return {
    predicted_label: "malignant",
    probabilities: { normal: 0.1, benign: 0.25, malignant: 0.65 },
    percent_display: { normal: 10.0, benign: 25.0, malignant: 65.0 },
    severity: "high",
    model_version: "busclass-0.1.0+abc123def456",
    elapsed_ms: 42,
    ...overrides,
  };
}

export function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "content-type": "application/json" },
  });
}

export function pngFile(name = "scan.png", bytes = 4096): File {
  return new File([new Uint8Array(bytes)], name, { type: "image/png" });
}
