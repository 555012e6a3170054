export type ClassName = "normal" | "benign" | "malignant";

/** Fixed display order for the percentage bars. */
export const CLASS_ORDER: readonly ClassName[] = ["normal", "benign", "malignant"];

/** Response body of POST /predict. */
export interface PredictionResult {
  predicted_label: ClassName;
  probabilities: Record<ClassName, number>;
  percent_display: Record<ClassName, number>;
  severity: string;
  model_version: string;
  elapsed_ms: number;
}

export interface HealthResult {
  status: string;
  model_version: string;
  uptime_s: number;
}
