/** Client-side session state.
 *
 * The server is authoritative: everything except draft rectangles and
 * overlay toggles is a verbatim copy of the last API response.  Drafts
 * never touch server state until they are submitted through `annotate`.
 */

import type {
  AnnotateResponse,
  EvalReportJson,
  LayerGroup,
  OverlayResponse,
  ParseTreeJson,
  PatternSummary,
  PruneEvidenceJson,
  RectJson,
  SessionDescriptor,
} from "./types";

export interface UiSessionState {
  session: SessionDescriptor | null;
  tree: ParseTreeJson | null;
  overlays: Partial<Record<LayerGroup, OverlayResponse>>;
  proposals: string[];
  evidence: PruneEvidenceJson[];
  report: EvalReportJson | null;
  /** client-only: rectangles being drawn, not yet submitted */
  draftRectangles: RectJson[];
  /** client-only: patterns hidden in the overlay view */
  hiddenPatterns: Set<string>;
  activeGroup: LayerGroup;
}

export function emptyState(): UiSessionState {
  return {
    session: null,
    tree: null,
    overlays: {},
    proposals: [],
    evidence: [],
    report: null,
    draftRectangles: [],
    hiddenPatterns: new Set(),
    activeGroup: "low",
  };
}

export class SessionStore {
  state: UiSessionState = emptyState();

  /** Server responses land here unmodified. */
  applySession(session: SessionDescriptor): void {
    this.state.session = session;
    // a mutation invalidates cached server-derived views
    this.state.overlays = {};
  }

  applyParse(tree: ParseTreeJson): void {
    this.state.tree = tree;
  }

  applyOverlay(group: LayerGroup, overlay: OverlayResponse): void {
    this.state.overlays[group] = overlay;
  }

  applyAnnotate(response: AnnotateResponse): void {
    this.state.proposals = response.proposals;
    this.state.evidence = response.evidence;
  }

  applyMetrics(report: EvalReportJson): void {
    this.state.report = report;
  }

  clearProposals(): void {
    this.state.proposals = [];
    this.state.evidence = [];
  }

  // ----- drafts (never sent until submitted) -----

  addDraft(rect: RectJson): void {
    this.state.draftRectangles = [...this.state.draftRectangles, rect];
  }

  clearDrafts(): void {
    this.state.draftRectangles = [];
  }

  /** Body of the annotate request for the current drafts. */
  annotateRequest(imageId: string): { image_id: string; rectangles: RectJson[]; scope: LayerGroup } {
    return {
      image_id: imageId,
      rectangles: this.state.draftRectangles,
      scope: this.state.activeGroup,
    };
  }

  togglePattern(patternId: string): void {
    const hidden = new Set(this.state.hiddenPatterns);
    if (hidden.has(patternId)) hidden.delete(patternId);
    else hidden.add(patternId);
    this.state.hiddenPatterns = hidden;
  }

  // ----- derived views (pure selections over server data, no arithmetic) -----

  patternsInGroup(group: LayerGroup): PatternSummary[] {
    return (this.state.session?.patterns ?? []).filter((p) => p.group === group);
  }

  activePatternCount(): number {
    return (this.state.session?.patterns ?? []).filter((p) => p.active).length;
  }

  /** Part box of the current parse, exactly as the server reported it. */
  partBox(): RectJson | null {
    return this.state.tree?.part_region ?? null;
  }

  /** Display values for the metric panel, passed through verbatim. */
  metricPanel(): { count: number; mean_nd: number; median_nd: number } | null {
    return this.state.report?.aggregates ?? null;
  }

  evidenceFor(patternId: string): PruneEvidenceJson | undefined {
    return this.state.evidence.find((e) => e.pattern_id === patternId);
  }
}
