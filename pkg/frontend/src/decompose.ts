// Decomposition flow: judge notification toast -> Ignore / Automatically
// Decompose dialog -> streamed optimization log -> plan diff -> explicit
// acceptance. Ignoring leaves the pipeline untouched.

import type { ApiClient } from "./api.js";
import type {
  CandidatePlanObj, JudgeVerdict, OpDiffEntry, PipelineObj, RunEvent,
} from "./types.js";

export type DecomposePhase =
  | "idle" | "suggested" | "dialog" | "optimizing" | "plan_ready"
  | "accepted" | "ignored" | "failed";

export class DecomposeFlow {
  phase: DecomposePhase = "idle";
  verdict: JudgeVerdict | null = null;
  optimizeId: string | null = null;
  logLines: string[] = [];
  winner: CandidatePlanObj | null = null;
  planDiff: OpDiffEntry[] = [];
  error: string | null = null;
  onChange: (() => void) | null = null;

  private notify(): void {
    if (this.onChange) this.onChange();
  }

  /** Judge verdicts ride the run event stream; a failed verdict carrying a
   * decompose suggestion raises the non-intrusive toast. */
  onJudgeVerdict(verdict: JudgeVerdict): boolean {
    if (verdict.pass) return false;
    if (!verdict.suggestions.some((s) => s.tag === "decompose")) return false;
    if (this.phase !== "idle" && this.phase !== "ignored") return false;
    this.verdict = verdict;
    this.phase = "suggested";
    this.notify();
    return true;
  }

  openDialog(): void {
    if (this.phase === "suggested") {
      this.phase = "dialog";
      this.notify();
    }
  }

  ignore(): void {
    this.phase = "ignored";
    this.notify();
  }

  async start(api: ApiClient, pipelineId: string, opName: string): Promise<void> {
    this.phase = "optimizing";
    this.logLines = [];
    this.notify();
    try {
      const { optimize_id, events_run_id } = await api.startDecompose(pipelineId, opName);
      this.optimizeId = optimize_id;
      await api.streamEvents(events_run_id, (ev: RunEvent) => {
        if (ev.kind === "optimize_log" && ev.payload) {
          this.logLines.push(String(ev.payload["line"] ?? ""));
          this.notify();
        }
        if (ev.kind === "optimize_done" && ev.payload) {
          this.winner = ev.payload["winner"] as CandidatePlanObj;
          this.planDiff = ev.payload["diff"] as OpDiffEntry[];
        }
        if (ev.kind === "error" && ev.payload) {
          this.error = String(ev.payload["message"] ?? "optimization failed");
        }
      });
      if (this.winner) {
        this.phase = "plan_ready";
      } else {
        this.phase = "failed";
        this.error = this.error ?? "no winning plan";
      }
    } catch (e) {
      this.phase = "failed";
      this.error = String(e);
    }
    this.notify();
  }

  async accept(api: ApiClient, pipelineId: string): Promise<PipelineObj> {
    if (this.phase !== "plan_ready" || !this.optimizeId) {
      throw new Error(`cannot accept in phase ${this.phase}`);
    }
    const result = await api.acceptPlan(pipelineId, this.optimizeId);
    this.phase = "accepted";
    this.notify();
    return result.pipeline;
  }
}
