import type { PromptEntry, PromptsUpdateResponse, TemplateFields } from "./types.js";

export interface PromptRow extends PromptEntry {
  /** When set, description is composed from these fields via the service. */
  fields: TemplateFields | null;
  error: string | null;
}

export interface PromptControllerOptions {
  debounceMs?: number;
  putPrompts: (prompts: PromptEntry[]) => Promise<PromptsUpdateResponse>;
  renderPrompt: (fields: TemplateFields) => Promise<{ description: string }>;
  onMatches: (response: PromptsUpdateResponse) => void;
  onPending: (pending: boolean) => void;
  onError: (message: string | null) => void;
  setTimer?: (fn: () => void, ms: number) => unknown;
  clearTimer?: (handle: unknown) => void;
}

/**
 * Prompt-table state machine: edits are debounced into a single PUT, at most
 * one mutation is in flight, and responses that are not for the newest edit
 * are discarded by sequence number. Invalid rows (empty object term) never
 * reach the wire; the error stays inline.
 */
export class PromptController {
  private rows: PromptRow[] = [];
  private timerHandle: unknown = null;
  private sequence = 0;
  private applied = 0;
  private readonly debounceMs: number;
  private readonly setTimer: (fn: () => void, ms: number) => unknown;
  private readonly clearTimer: (handle: unknown) => void;

  constructor(private readonly options: PromptControllerOptions) {
    this.debounceMs = options.debounceMs ?? 300;
    this.setTimer = options.setTimer ?? ((fn, ms) => setTimeout(fn, ms));
    this.clearTimer = options.clearTimer ?? ((handle) => clearTimeout(handle as number));
  }

  load(entries: PromptEntry[]): void {
    this.rows = entries.map((entry) => ({ ...entry, fields: null, error: null }));
  }

  snapshot(): PromptRow[] {
    return this.rows.map((row) => ({ ...row }));
  }

  editDescription(index: number, description: string): void {
    const row = this.rows[index];
    row.description = description;
    row.fields = null;
    row.error = description.trim() === "" ? "description must not be empty" : null;
    this.scheduleFlush();
  }

  editLabel(index: number, label: string): void {
    const row = this.rows[index];
    row.label = label;
    row.error = label.trim() === "" ? "label must not be empty" : null;
    this.scheduleFlush();
  }

  toggleExport(index: number, value: boolean): void {
    this.rows[index].export = value;
    this.scheduleFlush();
  }

  /** Compose a row's description from template fields via the service. */
  async editTemplateFields(index: number, fields: TemplateFields): Promise<void> {
    const row = this.rows[index];
    row.fields = { ...fields };
    if (!fields.object || fields.object.trim() === "") {
      row.error = "object term must not be empty";
      return; // invalid template: inline error, no render call, no PUT
    }
    try {
      const rendered = await this.options.renderPrompt(fields);
      row.description = rendered.description;
      row.error = null;
      this.scheduleFlush();
    } catch (error) {
      row.error = error instanceof Error ? error.message : String(error);
    }
  }

  addRow(entry: PromptEntry): void {
    this.rows.push({ ...entry, fields: null, error: null });
    this.scheduleFlush();
  }

  removeRow(index: number): void {
    this.rows.splice(index, 1);
    this.scheduleFlush();
  }

  private scheduleFlush(): void {
    if (this.timerHandle !== null) {
      this.clearTimer(this.timerHandle);
    }
    this.timerHandle = this.setTimer(() => {
      this.timerHandle = null;
      void this.flush();
    }, this.debounceMs);
  }

  /** Issue the PUT for the current state; stale responses are dropped. */
  async flush(): Promise<void> {
    if (this.rows.some((row) => row.error !== null)) {
      return;
    }
    if (this.rows.length === 0) {
      this.options.onError("prompt set must not be empty");
      return;
    }
    const seq = ++this.sequence;
    this.options.onPending(true);
    try {
      const response = await this.options.putPrompts(
        this.rows.map(({ label, description, export: exported }) => ({
          label,
          description,
          export: exported,
        })),
      );
      if (seq < this.sequence || seq <= this.applied) {
        return; // a newer mutation was issued; this response is stale
      }
      this.applied = seq;
      this.options.onError(null);
      this.options.onMatches(response);
    } catch (error) {
      if (seq < this.sequence) {
        return;
      }
      this.options.onError(error instanceof Error ? error.message : String(error));
    } finally {
      if (seq === this.sequence) {
        this.options.onPending(false);
      }
    }
  }
}
