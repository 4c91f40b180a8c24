import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";
import type { ScoreResponse } from "../src/types";

const here = dirname(fileURLToPath(import.meta.url));

export function loadDemoPage(name: string): void {
  const html = readFileSync(join(here, "..", "demo", name), "utf-8");
  document.documentElement.innerHTML = html
    .replace(/^<!DOCTYPE html>/, "")
    .replace(/<html[^>]*>|<\/html>/g, "");
}

export function scoreResponse(overrides: Partial<ScoreResponse> = {}): ScoreResponse {
  return {
    score: 0.87,
    label: "incongruent",
    paragraph_scores: [0.87],
    top_paragraph_index: 0,
    model_version: "test-model",
    ...overrides,
  };
}

export function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "content-type": "application/json" },
  });
}
