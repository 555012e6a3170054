import type { HealthResult, PredictionResult } from "./types";

export const REQUEST_TIMEOUT_MS = 10_000;

export class ServiceError extends Error {
  constructor(
    message: string,
    public readonly status: number | null = null,
  ) {
    super(message);
    this.name = "ServiceError";
  }
}

type FetchLike = typeof fetch;

/**
 * POST the image to /predict as the multipart field "image".
 * Throws ServiceError for HTTP errors, network failures, and the timeout.
 */
export async function predictImage(
  file: Blob & { name?: string },
  baseUrl: string,
  timeoutMs: number = REQUEST_TIMEOUT_MS,
  fetchFn: FetchLike = fetch,
): Promise<PredictionResult> {
  const form = new FormData();
  form.append("image", file, file.name ?? "upload");
  const controller = new AbortController();
  const timer = setTimeout(() => controller.abort(), timeoutMs);
  let response: Response;
  try {
    response = await fetchFn(`${baseUrl}/predict`, {
      method: "POST",
      body: form,
      signal: controller.signal,
    });
  } catch (err) {
    if ((err as Error).name === "AbortError") {
      throw new ServiceError(`The service did not answer within ${timeoutMs / 1000}s.`);
    }
    throw new ServiceError("Could not reach the prediction service.");
  } finally {
    clearTimeout(timer);
  }
  if (!response.ok) {
    let detail = `service returned ${response.status}`;
    try {
      const body = (await response.json()) as { error?: string };
      if (body.error) detail = body.error;
    } catch {
      // non-JSON error body; keep the status text
    }
    throw new ServiceError(detail, response.status);
  }
  return (await response.json()) as PredictionResult;
}

export async function fetchHealth(
  baseUrl: string,
  fetchFn: FetchLike = fetch,
): Promise<HealthResult> {
  const response = await fetchFn(`${baseUrl}/health`);
  if (!response.ok) {
    throw new ServiceError(`health check returned ${response.status}`, response.status);
  }
  return (await response.json()) as HealthResult;
}
