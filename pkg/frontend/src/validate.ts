export const MAX_UPLOAD_BYTES = 10 * 1024 * 1024;

const ACCEPTED_TYPES = new Set(["image/png", "image/jpeg", "image/bmp"]);
const ACCEPTED_EXTENSIONS = /\.(png|jpe?g|bmp)$/i;

export interface FileLike {
  name: string;
  size: number;
  type: string;
}

/**
 * Client-side validation before any network call.
 * Returns an error message, or null when the file looks acceptable.
 * Content is not inspected here; a file with image-looking metadata but
 * broken bytes is caught by the service's 400.
 */
export function validateFile(file: FileLike): string | null {
  const typeOk = file.type ? ACCEPTED_TYPES.has(file.type) : ACCEPTED_EXTENSIONS.test(file.name);
  if (!typeOk) {
    return `Unsupported file type: ${file.type || file.name}. Use PNG, JPG, or BMP.`;
  }
  if (file.size > MAX_UPLOAD_BYTES) {
    const mib = (file.size / (1024 * 1024)).toFixed(1);
    return `File is too large (${mib} MiB). The limit is 10 MiB.`;
  }
  return null;
}
