// Prompt-refinement dialog state: the latest suggestion with its diff, plus
// the branching revision tree for navigation.

import type { ApiClient } from "./api.js";
import type { PipelineObj, RefineSession, RevisionNode } from "./types.js";

export interface TreeRow {
  node: RevisionNode;
  depth: number;
  active: boolean;
}

export class RefineFlow {
  session: RefineSession | null = null;
  busy = false;
  error: string | null = null;
  onChange: (() => void) | null = null;

  private notify(): void {
    if (this.onChange) this.onChange();
  }

  get activeNode(): RevisionNode | null {
    if (!this.session) return null;
    return this.session.tree.find((n) => n.id === this.session!.active_node) ?? null;
  }

  nodeById(id: string): RevisionNode | null {
    return this.session?.tree.find((n) => n.id === id) ?? null;
  }

  /** Depth-first tree rows for the revision-history diagram. */
  treeRows(): TreeRow[] {
    if (!this.session) return [];
    const byParent = new Map<string | null, RevisionNode[]>();
    for (const node of this.session.tree) {
      const list = byParent.get(node.parent) ?? [];
      list.push(node);
      byParent.set(node.parent, list);
    }
    const rows: TreeRow[] = [];
    const walk = (parent: string | null, depth: number) => {
      for (const node of byParent.get(parent) ?? []) {
        rows.push({ node, depth, active: node.id === this.session!.active_node });
        walk(node.id, depth + 1);
      }
    };
    walk(null, 0);
    return rows;
  }

  private async guard<T>(fn: () => Promise<T>): Promise<T | null> {
    this.busy = true;
    this.error = null;
    this.notify();
    try {
      return await fn();
    } catch (e) {
      this.error = String(e);
      return null;
    } finally {
      this.busy = false;
      this.notify();
    }
  }

  async start(api: ApiClient, pipelineId: string, opName: string,
              extraInstructions?: string): Promise<void> {
    await this.guard(async () => {
      this.session = await api.startRefine(pipelineId, opName, extraInstructions);
    });
  }

  async sendFeedback(api: ApiClient, feedback: string): Promise<void> {
    if (!this.session) return;
    await this.guard(async () => {
      const resp = await api.refineFeedback(this.session!.session_id, feedback);
      this.session = resp;
    });
  }

  async manualEdit(api: ApiClient, prompt: string): Promise<void> {
    if (!this.session) return;
    await this.guard(async () => {
      this.session = await api.refineEdit(this.session!.session_id, prompt);
    });
  }

  async checkout(api: ApiClient, nodeId: string): Promise<void> {
    if (!this.session) return;
    await this.guard(async () => {
      this.session = await api.refineCheckout(this.session!.session_id, nodeId);
    });
  }

  async accept(api: ApiClient, nodeId?: string): Promise<PipelineObj | null> {
    if (!this.session) return null;
    const result = await this.guard(() =>
      api.refineAccept(this.session!.session_id, nodeId));
    return result ? result.pipeline : null;
  }
}
