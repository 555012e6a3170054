/**
 * Service base URL resolution, in priority order:
 *   1. window.BUSCLASS_SERVICE_URL (set by the host page at build/deploy time)
 *   2. <meta name="busclass-service" content="...">
 *   3. ./busclass.config.json with {"serviceUrl": "..."} (runtime config file)
 *   4. same origin ("")
 */
export async function resolveServiceUrl(fetchFn: typeof fetch = fetch): Promise<string> {
  const fromGlobal = (window as { BUSCLASS_SERVICE_URL?: string }).BUSCLASS_SERVICE_URL;
  if (fromGlobal) return stripSlash(fromGlobal);
  const meta = document.querySelector<HTMLMetaElement>('meta[name="busclass-service"]');
  if (meta?.content) return stripSlash(meta.content);
  try {
    const response = await fetchFn("./busclass.config.json");
    if (response.ok) {
      const body = (await response.json()) as { serviceUrl?: string };
      if (body.serviceUrl) return stripSlash(body.serviceUrl);
    }
  } catch {
    // no runtime config file; same-origin default
  }
  return "";
}

function stripSlash(url: string): string {
  return url.endsWith("/") ? url.slice(0, -1) : url;
}
