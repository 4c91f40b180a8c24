import type {
  ClientConfig,
  FeedbackPayload,
  HeadlineTarget,
  ScoreResponse,
} from "./types";

export class ScoreUnavailableError extends Error {
  constructor(detail: string) {
    super(`score unavailable: ${detail}`);
  }
}

/** SHA-256 of a string as lowercase hex (WebCrypto). */
export async function sha256Hex(text: string): Promise<string> {
  const bytes = new TextEncoder().encode(text);
  const digest = await crypto.subtle.digest("SHA-256", bytes);
  return Array.from(new Uint8Array(digest))
    .map((b) => b.toString(16).padStart(2, "0"))
    .join("");
}

/**
 * Talks to the /v1 scoring API. Scores are cached per destination and
 * concurrent requests for the same destination share one fetch.
 */
export class ApiClient {
  private cache = new Map<string, ScoreResponse>();
  private inFlight = new Map<string, Promise<ScoreResponse>>();

  constructor(
    private config: ClientConfig,
    private fetchFn: typeof fetch = (...args) => fetch(...args),
  ) {}

  cachedScore(destination: string): ScoreResponse | undefined {
    return this.cache.get(destination);
  }

  score(target: HeadlineTarget): Promise<ScoreResponse> {
    const key = target.destination;
    const hit = this.cache.get(key);
    if (hit) return Promise.resolve(hit);
    const pending = this.inFlight.get(key);
    if (pending) return pending;

    const request = this.requestScore(target)
      .then((resp) => {
        this.cache.set(key, resp);
        while (this.cache.size > this.config.cacheSize) {
          const oldest = this.cache.keys().next().value as string;
          this.cache.delete(oldest);
        }
        return resp;
      })
      .finally(() => {
        this.inFlight.delete(key);
      });
    this.inFlight.set(key, request);
    return request;
  }

  private async requestScore(target: HeadlineTarget): Promise<ScoreResponse> {
    // pages that carry their body text inline are scored as text;
    // otherwise the server is asked to fetch the destination itself
    const body = target.bodyText
      ? { headline: target.headlineText, body: target.bodyText }
      : { url: target.destination };
    let resp: Response;
    try {
      resp = await this.fetchFn(`${this.config.apiBase}/v1/score`, {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify(body),
      });
    } catch (err) {
      throw new ScoreUnavailableError(String(err));
    }
    if (!resp.ok) {
      throw new ScoreUnavailableError(`server returned ${resp.status}`);
    }
    return (await resp.json()) as ScoreResponse;
  }

  /** POST a reader verdict; one silent retry on network failure. */
  async sendFeedback(payload: FeedbackPayload): Promise<{ id: number }> {
    const attempt = async () => {
      const resp = await this.fetchFn(`${this.config.apiBase}/v1/feedback`, {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify(payload),
      });
      if (!resp.ok) throw new Error(`feedback rejected: ${resp.status}`);
      return (await resp.json()) as { id: number };
    };
    try {
      return await attempt();
    } catch {
      return await attempt();
    }
  }
}
