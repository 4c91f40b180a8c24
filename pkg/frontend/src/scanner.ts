import type { HeadlineTarget } from "./types";

const MIN_HEADLINE_TOKENS = 4;
// best-effort: portals disagree on article URL shapes
const ARTICLE_PATH = /(article|story|news|post)|\.html?$|\/\d{4,}/i;

function isArticleLike(url: URL): boolean {
  return ARTICLE_PATH.test(url.pathname + url.search);
}

/**
 * Collect headline-looking links: same-site anchors with article-like
 * destinations and at least four tokens of text. Re-scanning returns the
 * same targets; nothing on the page is mutated.
 */
export function scanPage(doc: Document): HeadlineTarget[] {
  const pageOrigin = new URL(doc.baseURI).origin;
  const targets: HeadlineTarget[] = [];
  const seen = new Set<string>();
  for (const anchor of Array.from(doc.querySelectorAll<HTMLAnchorElement>("a[href]"))) {
    const text = (anchor.textContent ?? "").trim().replace(/\s+/g, " ");
    if (text.split(" ").length < MIN_HEADLINE_TOKENS) continue;
    let url: URL;
    try {
      url = new URL(anchor.getAttribute("href") ?? "", doc.baseURI);
    } catch {
      continue;
    }
    if (url.origin !== pageOrigin || !isArticleLike(url)) continue;
    const destination = url.href;
    if (seen.has(destination)) continue;
    seen.add(destination);
    targets.push({
      anchor,
      headlineText: text,
      destination,
      bodyText: anchor.dataset.body || undefined,
    });
  }
  return targets;
}

/**
 * Re-scan when headlines are inserted dynamically. Invokes the callback
 * with fresh targets after childList mutations; returns the observer so
 * callers can disconnect.
 */
export function observeHeadlines(
  doc: Document,
  onTargets: (targets: HeadlineTarget[]) => void,
  debounceMs = 100,
): MutationObserver {
  let timer: ReturnType<typeof setTimeout> | undefined;
  const observer = new MutationObserver(() => {
    clearTimeout(timer);
    timer = setTimeout(() => onTargets(scanPage(doc)), debounceMs);
  });
  observer.observe(doc.body, { childList: true, subtree: true });
  return observer;
}
