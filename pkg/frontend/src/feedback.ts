import { ApiClient, sha256Hex } from "./api";

export interface FeedbackContext {
  headline: string;
  url?: string;
  scoreShown: number;
  modelVersion?: string;
}

/**
 * Append the congruent/incongruent verdict buttons to an article page.
 * Both buttons disable on first click so a double click cannot submit
 * twice; a network failure (after the client's single retry) surfaces
 * as a failure message.
 */
export function injectFeedbackWidget(
  container: HTMLElement,
  context: FeedbackContext,
  api: ApiClient,
): HTMLElement {
  const doc = container.ownerDocument;
  const widget = doc.createElement("div");
  widget.className = "incongruity-feedback";
  widget.style.cssText =
    "margin-top:16px;padding:10px;border-top:1px solid #ccc;font:13px system-ui,sans-serif";

  const prompt = doc.createElement("span");
  prompt.textContent = "Did this headline match the story? ";
  widget.appendChild(prompt);

  const status = doc.createElement("span");
  status.className = "incongruity-feedback-status";

  const mkButton = (text: string, verdict: "congruent" | "incongruent") => {
    const button = doc.createElement("button");
    button.type = "button";
    button.textContent = text;
    button.dataset.verdict = verdict;
    button.style.cssText = "margin-right:6px";
    button.addEventListener("click", () => {
      void submit(verdict);
    });
    return button;
  };

  const buttons = [
    mkButton("Yes, it matched", "congruent"),
    mkButton("No, it was misleading", "incongruent"),
  ];

  async function submit(verdict: "congruent" | "incongruent"): Promise<void> {
    buttons.forEach((b) => {
      b.disabled = true;
    });
    status.textContent = "sending…";
    try {
      const hash = await sha256Hex(context.headline);
      await api.sendFeedback({
        headline_hash: hash,
        label: verdict,
        score_shown: context.scoreShown,
        model_version: context.modelVersion,
        url: context.url,
      });
      status.textContent = "thanks — your feedback was recorded";
    } catch {
      status.textContent = "feedback could not be sent";
      widget.classList.add("failed");
    }
  }

  buttons.forEach((b) => widget.appendChild(b));
  widget.appendChild(status);
  container.appendChild(widget);
  return widget;
}
