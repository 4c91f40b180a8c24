import { ApiClient } from "./api";
import { injectFeedbackWidget } from "./feedback";
import { observeHeadlines, scanPage } from "./scanner";
import { TooltipController } from "./tooltip";
import { DEFAULT_CONFIG, type ClientConfig } from "./types";

/**
 * Entry point: wire tooltips to every headline on the page, keep up with
 * dynamically inserted ones, and add the feedback control on article
 * pages (a page with an <article> element and an <h1>).
 */
export function init(partial: Partial<ClientConfig> = {}, doc: Document = document) {
  const config: ClientConfig = { ...DEFAULT_CONFIG, ...partial };
  const api = new ApiClient(config);
  const tooltips = new TooltipController(api, config, doc);

  tooltips.attach(scanPage(doc));
  const observer = observeHeadlines(doc, (targets) => tooltips.attach(targets));

  const article = doc.querySelector("article");
  const headline = article?.querySelector("h1")?.textContent?.trim();
  if (article && headline) {
    const cached = api.cachedScore(doc.baseURI);
    injectFeedbackWidget(
      article,
      {
        headline,
        url: doc.baseURI,
        scoreShown: cached?.score ?? tooltips.lastShown?.score ?? -1,
        modelVersion: cached?.model_version,
      },
      api,
    );
  }
  return { api, tooltips, observer, config };
}
