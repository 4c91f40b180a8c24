/** Response shape of POST /v1/score. */
export interface ScoreResponse {
  score: number;
  label: string;
  paragraph_scores: number[];
  top_paragraph_index: number;
  model_version: string;
}

/** Body of POST /v1/feedback (timestamp is server-assigned). */
export interface FeedbackPayload {
  headline_hash: string;
  label: "congruent" | "incongruent";
  score_shown: number;
  model_version?: string;
  url?: string;
}

export interface ClientConfig {
  /** Base address of the scoring API, no trailing slash. */
  apiBase: string;
  /** Hover must be sustained this long before a request fires. */
  hoverDebounceMs: number;
  scoreFormat: "percent" | "raw";
  /** Max number of destinations kept in the score cache. */
  cacheSize: number;
}

export const DEFAULT_CONFIG: ClientConfig = {
  apiBase: "http://127.0.0.1:8080",
  hoverDebounceMs: 150,
  scoreFormat: "percent",
  cacheSize: 200,
};

/** One headline link found on the page. */
export interface HeadlineTarget {
  anchor: HTMLAnchorElement;
  headlineText: string;
  destination: string;
  /** Body text carried by the page itself (demo pages); scored as text. */
  bodyText?: string;
}

export type ScoreBand = "low" | "medium" | "high";

/** Three-band reading of a score: <0.4 low, 0.4-0.7 medium, >0.7 high. */
export function scoreBand(score: number): ScoreBand {
  if (score < 0.4) return "low";
  if (score <= 0.7) return "medium";
  return "high";
}

export function formatScore(score: number, format: ClientConfig["scoreFormat"]): string {
  return format === "raw" ? score.toFixed(3) : `${Math.round(score * 100)}%`;
}
