/** Fixture-driven fetch: replays the recorded API conversation in order. */

import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";
import type { FetchLike } from "../src/api";

export interface FixtureStep {
  name: string;
  request: {
    method: string;
    path: string;
    body: unknown | null;
    params: Record<string, string> | null;
  };
  status: number;
  response: unknown;
}

export interface FixtureFlow {
  fixture_version: number;
  steps: FixtureStep[];
}

export function loadFlow(): FixtureFlow {
  const here = dirname(fileURLToPath(import.meta.url));
  return JSON.parse(readFileSync(join(here, "fixtures", "flow.json"), "utf-8"));
}

/** Stable serialization for byte-level comparisons. */
export function canonical(value: unknown): string {
  return JSON.stringify(sortKeys(value));
}

function sortKeys(value: unknown): unknown {
  if (Array.isArray(value)) return value.map(sortKeys);
  if (value !== null && typeof value === "object") {
    return Object.fromEntries(
      Object.keys(value as Record<string, unknown>)
        .sort()
        .map((k) => [k, sortKeys((value as Record<string, unknown>)[k])]),
    );
  }
  return value;
}

function expectedUrl(step: FixtureStep): string {
  const params = step.request.params;
  if (params && Object.keys(params).length > 0) {
    return step.request.path + "?" + new URLSearchParams(params).toString();
  }
  return step.request.path;
}

export class FixtureReplay {
  private cursor = 0;

  constructor(private readonly flow: FixtureFlow) {}

  get fetch(): FetchLike {
    return async (input, init) => {
      const step = this.flow.steps[this.cursor];
      if (!step) throw new Error(`fixture exhausted at request ${input}`);
      this.cursor += 1;
      const method = init?.method ?? "GET";
      if (method !== step.request.method || input !== expectedUrl(step)) {
        throw new Error(
          `fixture mismatch at step ${step.name}: expected ${step.request.method} ${expectedUrl(step)},` +
            ` got ${method} ${input}`,
        );
      }
      if (step.request.body !== null) {
        const sent = init?.body ? JSON.parse(String(init.body)) : null;
        if (canonical(sent) !== canonical(step.request.body)) {
          throw new Error(
            `fixture body mismatch at step ${step.name}:\n sent ${canonical(sent)}\n want ${canonical(step.request.body)}`,
          );
        }
      }
      return new Response(JSON.stringify(step.response), {
        status: step.status,
        headers: { "content-type": "application/json" },
      });
    };
  }

  step(name: string): FixtureStep {
    const found = this.flow.steps.find((s) => s.name === name);
    if (!found) throw new Error(`no fixture step named ${name}`);
    return found;
  }

  get exhausted(): boolean {
    return this.cursor === this.flow.steps.length;
  }
}
