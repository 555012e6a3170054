import type { PredictionResult } from "./types";
import type { FileLike } from "./validate";

export type Phase = "idle" | "selected" | "uploading" | "predicted" | "error";

/**
 * Upload workflow state. Exactly one phase at a time; a prediction result
 * exists only in the predicted phase. Transitions are pure so they can be
 * tested without a DOM.
 */
export interface UploadState {
  phase: Phase;
  file: FileLike | null;
  previewUrl: string | null;
  result: PredictionResult | null;
  error: string | null;
  canRetry: boolean;
}

export const initialState: UploadState = {
  phase: "idle",
  file: null,
  previewUrl: null,
  result: null,
  error: null,
  canRetry: false,
};

export function fileSelected(
  file: FileLike,
  previewUrl: string | null,
  validationError: string | null,
): UploadState {
  if (validationError) {
    return {
      phase: "error",
      file: null,
      previewUrl: null,
      result: null,
      error: validationError,
      canRetry: false,
    };
  }
  return { phase: "selected", file, previewUrl, result: null, error: null, canRetry: false };
}

export function canSubmit(state: UploadState): boolean {
  return state.file !== null && (state.phase === "selected" || (state.phase === "error" && state.canRetry));
}

export function submitStarted(state: UploadState): UploadState {
  if (!canSubmit(state)) {
    return state;
  }
  return { ...state, phase: "uploading", result: null, error: null, canRetry: false };
}

export function predictionReceived(state: UploadState, result: PredictionResult): UploadState {
  return { ...state, phase: "predicted", result, error: null, canRetry: false };
}

export function requestFailed(state: UploadState, message: string): UploadState {
  // the selected file is kept so the user can retry
  return { ...state, phase: "error", result: null, error: message, canRetry: state.file !== null };
}

export function reset(): UploadState {
  return initialState;
}

/** Invariant check used by tests: one phase, result only when predicted. */
export function stateInvariantsHold(state: UploadState): boolean {
  if (state.result !== null && state.phase !== "predicted") return false;
  if (state.phase === "predicted" && state.result === null) return false;
  if (state.phase === "error" && state.error === null) return false;
  if (state.phase === "uploading" && state.file === null) return false;
  return true;
}
