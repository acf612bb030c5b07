// Document inspector: row-by-row viewer with keyboard navigation, optional
// split-screen comparison, and in-situ note entry.

import type { ApiClient } from "./api.js";
import type { Note, Row } from "./types.js";

export interface NoteDraft {
  operationId: string;
  attribute: string;
  comment: string;
  tag: "red" | "green" | "yellow" | "blue" | null;
  rowRef: string | null;
}

export class InspectorState {
  index = 0;
  compareIndex: number | null = null;  // split-screen partner row

  constructor(readonly rows: Row[], readonly operationId: string,
              public attribute: string) {}

  get current(): Row | null {
    return this.rows[this.index] ?? null;
  }

  get compare(): Row | null {
    return this.compareIndex === null ? null : this.rows[this.compareIndex] ?? null;
  }

  next(): void {
    if (this.index < this.rows.length - 1) this.index += 1;
  }

  prev(): void {
    if (this.index > 0) this.index -= 1;
  }

  /** Keyboard navigation: j/ArrowDown next, k/ArrowUp prev. */
  handleKey(key: string): boolean {
    if (key === "ArrowDown" || key === "j") {
      this.next();
      return true;
    }
    if (key === "ArrowUp" || key === "k") {
      this.prev();
      return true;
    }
    return false;
  }

  toggleSplit(): void {
    if (this.compareIndex === null) {
      this.compareIndex = Math.min(this.index + 1, this.rows.length - 1);
      if (this.compareIndex === this.index) this.compareIndex = null;
    } else {
      this.compareIndex = null;
    }
  }

  noteDraft(comment: string, tag: NoteDraft["tag"] = null): NoteDraft {
    return {
      operationId: this.operationId,
      attribute: this.attribute,
      comment,
      tag,
      rowRef: this.current ? this.current.id : null,
    };
  }

  async submitNote(api: ApiClient, draft: NoteDraft): Promise<Note> {
    return api.addNote({
      operation_id: draft.operationId,
      attribute: draft.attribute,
      comment: draft.comment,
      tag: draft.tag,
      row_ref: draft.rowRef,
    });
  }
}
