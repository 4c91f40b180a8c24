import { ApiClient } from "./api";
import {
  formatScore,
  scoreBand,
  type ClientConfig,
  type HeadlineTarget,
  type ScoreResponse,
} from "./types";

const BAND_COLORS = { low: "#2e7d32", medium: "#f9a825", high: "#c62828" };
const ATTACHED_FLAG = "incongruityTooltip";

/**
 * Hover tooltip that shows the incongruence score of a headline before
 * the reader clicks it. One tooltip element is shared by all targets;
 * the article content itself is never touched.
 */
export class TooltipController {
  private tooltip: HTMLDivElement;
  private timer: ReturnType<typeof setTimeout> | undefined;
  private activeTarget: HeadlineTarget | null = null;
  lastShown: ScoreResponse | null = null;

  constructor(
    private api: ApiClient,
    private config: ClientConfig,
    private doc: Document,
  ) {
    this.tooltip = doc.createElement("div");
    this.tooltip.className = "incongruity-tooltip";
    this.tooltip.style.cssText = [
      "position:absolute",
      "z-index:2147483646",
      "max-width:280px",
      "padding:6px 10px",
      "border-radius:4px",
      "background:#222",
      "color:#fff",
      "font:12px/1.4 system-ui,sans-serif",
      "pointer-events:none",
      "display:none",
    ].join(";");
    doc.body.appendChild(this.tooltip);
  }

  /** Wire hover listeners; calling again on the same anchors is a no-op. */
  attach(targets: HeadlineTarget[]): void {
    for (const target of targets) {
      if (target.anchor.dataset[ATTACHED_FLAG]) continue;
      target.anchor.dataset[ATTACHED_FLAG] = "1";
      target.anchor.addEventListener("mouseenter", () => this.onEnter(target));
      target.anchor.addEventListener("mouseleave", () => this.onLeave());
    }
  }

  private onEnter(target: HeadlineTarget): void {
    clearTimeout(this.timer);
    this.timer = setTimeout(() => {
      void this.show(target);
    }, this.config.hoverDebounceMs);
  }

  private onLeave(): void {
    clearTimeout(this.timer);
    this.activeTarget = null;
    this.tooltip.style.display = "none";
  }

  private async show(target: HeadlineTarget): Promise<void> {
    this.activeTarget = target;
    try {
      const resp = await this.api.score(target);
      if (this.activeTarget !== target) return; // pointer left meanwhile
      this.lastShown = resp;
      this.render(target, resp);
    } catch {
      if (this.activeTarget !== target) return;
      this.renderUnavailable(target);
    }
  }

  private place(target: HeadlineTarget): void {
    const rect = target.anchor.getBoundingClientRect();
    const win = this.doc.defaultView;
    this.tooltip.style.top = `${rect.bottom + 6 + (win?.scrollY ?? 0)}px`;
    this.tooltip.style.left = `${rect.left + (win?.scrollX ?? 0)}px`;
    this.tooltip.style.display = "block";
  }

  private render(target: HeadlineTarget, resp: ScoreResponse): void {
    const band = scoreBand(resp.score);
    this.tooltip.textContent = "";
    const badge = this.doc.createElement("span");
    badge.className = `incongruity-badge band-${band}`;
    badge.style.cssText = `font-weight:bold;color:${BAND_COLORS[band]}`;
    badge.textContent = formatScore(resp.score, this.config.scoreFormat);
    this.tooltip.appendChild(badge);
    this.tooltip.appendChild(
      this.doc.createTextNode(" chance this headline does not match the story"),
    );
    if (resp.paragraph_scores.length > 1) {
      // first interpretability cue: which paragraph drove the score
      const hint = this.doc.createElement("div");
      hint.className = "incongruity-top-paragraph";
      hint.style.cssText = "opacity:0.8;margin-top:2px";
      hint.textContent = `strongest signal: paragraph ${resp.top_paragraph_index + 1}`;
      this.tooltip.appendChild(hint);
    }
    this.place(target);
  }

  private renderUnavailable(target: HeadlineTarget): void {
    this.lastShown = null;
    this.tooltip.textContent = "score unavailable";
    this.tooltip.className = "incongruity-tooltip unavailable";
    this.place(target);
  }
}
