/** Contract tests: the recorded API conversation drives the client and
 * store through the full annotate -> propose -> confirm -> undo loop, and
 * every displayed value must byte-match the fixture response it came from.
 */

import { describe, expect, it } from "vitest";
import { ApiClient } from "../src/api";
import { SessionStore } from "../src/state";
import type {
  AnnotateResponse,
  MetricsResponse,
  ParseResponse,
  SessionResponse,
} from "../src/types";
import { FixtureReplay, canonical, loadFlow } from "./replay";

function fixtureClient(): { client: ApiClient; replay: FixtureReplay } {
  const replay = new FixtureReplay(loadFlow());
  return { client: new ApiClient("", replay.fetch), replay };
}

describe("recorded conversation", () => {
  it("drives the full annotate/propose/confirm/undo loop with byte-matched state", async () => {
    const { client, replay } = fixtureClient();
    const store = new SessionStore();

    const datasets = await client.listDatasets();
    expect(canonical(datasets)).toBe(canonical(replay.step("datasets").response));
    const datasetId = datasets.datasets[0]!.dataset_id;

    const images = await client.listImages(datasetId);
    expect(canonical(images)).toBe(canonical(replay.step("images").response));

    const created = await client.createSession(datasetId, datasets.datasets[0]!.aogs[0]!);
    store.applySession(created.session);
    const createdFixture = replay.step("create_session").response as SessionResponse;
    expect(canonical(store.state.session)).toBe(canonical(createdFixture.session));
    const initialActive = canonical(
      store.state.session!.patterns.map((p) => [p.pattern_id, p.active]),
    );
    const sid = created.session.session_id;

    // parse: the displayed part box is exactly the server's part_region
    const parsed = await client.parseImage(sid, "test_000");
    store.applyParse(parsed.tree);
    const parseFixture = replay.step("parse").response as ParseResponse;
    expect(canonical(store.partBox())).toBe(canonical(parseFixture.tree.part_region));
    expect(store.state.tree!.total_score).toBe(parseFixture.tree.total_score);

    // overlay: layout and png pass through unmodified
    const overlay = await client.overlay(sid, "test_000", "low");
    store.applyOverlay("low", overlay);
    expect(canonical(store.state.overlays.low)).toBe(canonical(replay.step("overlay_low").response));

    // annotate: drafts become the request, proposals come back verbatim
    const annotateFixture = replay.step("annotate") as {
      request: { body: { rectangles: { x: number; y: number; w: number; h: number }[] } };
      response: AnnotateResponse;
    };
    for (const rect of annotateFixture.request.body.rectangles) store.addDraft(rect);
    const request = store.annotateRequest("test_000");
    expect(canonical(request)).toBe(canonical(annotateFixture.request.body));
    const proposals = await client.annotate(sid, request.image_id, request.rectangles, request.scope);
    store.applyAnnotate(proposals);
    expect(canonical(store.state.proposals)).toBe(canonical(annotateFixture.response.proposals));
    expect(canonical(store.state.evidence)).toBe(canonical(annotateFixture.response.evidence));

    // confirm: prune everything proposed; the summary must match the fixture
    const pruned = await client.prune(sid, store.state.proposals);
    store.applySession(pruned.session);
    store.clearDrafts();
    store.clearProposals();
    const pruneFixture = replay.step("prune").response as SessionResponse;
    expect(canonical(store.state.session)).toBe(canonical(pruneFixture.session));
    for (const patternId of annotateFixture.response.proposals) {
      const summary = store.state.session!.patterns.find((p) => p.pattern_id === patternId)!;
      expect(summary.active).toBe(false);
    }

    // pattern counts shown in the UI derive from the descriptor alone
    const sessionAfterPrune = await client.getSession(sid);
    store.applySession(sessionAfterPrune.session);
    const activeFromFixture = (replay.step("session_after_prune").response as SessionResponse).session
      .patterns.filter((p) => p.active).length;
    expect(store.activePatternCount()).toBe(activeFromFixture);

    // re-parse after the prune: localization comes back, byte-identical
    const reparsed = await client.parseImage(sid, "test_000");
    store.applyParse(reparsed.tree);
    expect(canonical(store.partBox())).toBe(
      canonical((replay.step("parse_after_prune").response as ParseResponse).tree.part_region),
    );

    // metric panel after the prune
    const metricsAfterPrune = await client.metrics(sid);
    store.applyMetrics(metricsAfterPrune.report);
    expect(canonical(store.metricPanel())).toBe(
      canonical((replay.step("metrics_after_prune").response as MetricsResponse).report.aggregates),
    );

    // undo: every pattern is active again, exactly as at session start
    const undone = await client.undo(sid, annotateFixture.response.proposals.length);
    store.applySession(undone.session);
    expect(
      canonical(store.state.session!.patterns.map((p) => [p.pattern_id, p.active])),
    ).toBe(initialActive);
    expect(store.state.session!.undo_depth).toBe(0);

    const sessionAfterUndo = await client.getSession(sid);
    store.applySession(sessionAfterUndo.session);
    const undoFixture = replay.step("session_after_undo").response as SessionResponse;
    expect(canonical(store.state.session)).toBe(canonical(undoFixture.session));
    // the undo response and the follow-up GET describe the same state
    expect(canonical(undone.session)).toBe(canonical(undoFixture.session));

    // prior overlay restored after undo
    const overlayAfterUndo = await client.overlay(sid, "test_000", "low");
    store.applyOverlay("low", overlayAfterUndo);
    expect(canonical(store.state.overlays.low)).toBe(
      canonical(replay.step("overlay_after_undo").response),
    );
    expect(canonical(overlayAfterUndo)).toBe(canonical(overlay));

    // metric panel byte-matches GET /metrics
    const metrics = await client.metrics(sid);
    store.applyMetrics(metrics.report);
    const metricsFixture = replay.step("metrics").response as MetricsResponse;
    expect(canonical(store.metricPanel())).toBe(canonical(metricsFixture.report.aggregates));
    expect(store.metricPanel()!.mean_nd).toBe(metricsFixture.report.aggregates.mean_nd);

    expect(replay.exhausted).toBe(true);
  });

  it("proposal evidence carries the decision inputs the panel shows", () => {
    const replay = new FixtureReplay(loadFlow());
    const annotate = replay.step("annotate").response as AnnotateResponse;
    expect(annotate.proposals.length).toBeGreaterThan(0);
    for (const evidence of annotate.evidence) {
      expect(evidence.proposed).toBe(
        evidence.center_inside && evidence.inside_mass > evidence.outside_mass,
      );
      expect(evidence.source).toBe("fallback");
    }
    const proposedIds = annotate.evidence.filter((e) => e.proposed).map((e) => e.pattern_id);
    expect(canonical(proposedIds.slice().sort())).toBe(canonical(annotate.proposals.slice().sort()));
  });

  it("surfaces API errors verbatim with field paths", async () => {
    const fetchFn = async () =>
      new Response(JSON.stringify({ detail: { field: "rectangles", error: "must be nonempty" } }), {
        status: 422,
        headers: { "content-type": "application/json" },
      });
    const client = new ApiClient("", fetchFn);
    await expect(client.annotate("s0001", "img", [], "low")).rejects.toMatchObject({
      status: 422,
      detail: { field: "rectangles", error: "must be nonempty" },
    });
  });
});
