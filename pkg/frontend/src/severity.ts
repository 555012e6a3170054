import type { ClassName } from "./types";

/** Severity color semantics: healthy green, benign amber, malignant red. */
export const SEVERITY_COLOR: Record<ClassName, string> = {
  normal: "#2e7d32",
  benign: "#ff8f00",
  malignant: "#c62828",
};

export function severityColor(label: ClassName): string {
  return SEVERITY_COLOR[label];
}
