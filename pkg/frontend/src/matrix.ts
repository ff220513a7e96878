import type { MatchResponse } from "./types.js";

export interface MatrixCell {
  value: number;
  bold: boolean;
  underlined: boolean;
}

/**
 * Cell markings for the similarity table: the winning column per row is bold
 * and the runner-up underlined, both taken from the service's assignments so
 * the view mirrors the engine's tie rule exactly.
 */
export function buildMatrixView(match: MatchResponse): MatrixCell[][] {
  return match.matrix.map((row, rowIndex) => {
    const assignment = match.assignments[rowIndex];
    return row.map((value, col) => ({
      value,
      bold: assignment !== undefined && col === assignment.class_index,
      underlined:
        assignment !== undefined &&
        assignment.runner_up !== null &&
        col === assignment.runner_up.class_index,
    }));
  });
}

export interface MatrixCallbacks {
  onCellClick?: (segmentId: string, classIndex: number) => void;
}

/** Render the matrix table, or an empty-state panel when there is no data. */
export function renderMatrix(
  container: HTMLElement,
  match: MatchResponse | null,
  callbacks: MatrixCallbacks = {},
): void {
  container.textContent = "";
  if (!match || match.matrix.length === 0) {
    const empty = container.ownerDocument.createElement("p");
    empty.className = "matrix-empty";
    empty.textContent = "No match yet. Load an image to see similarities.";
    container.appendChild(empty);
    return;
  }

  const doc = container.ownerDocument;
  const table = doc.createElement("table");
  table.className = "matrix";

  const head = doc.createElement("tr");
  head.appendChild(doc.createElement("th"));
  for (const label of match.prompt_labels) {
    const th = doc.createElement("th");
    th.textContent = label;
    head.appendChild(th);
  }
  table.appendChild(head);

  const view = buildMatrixView(match);
  match.segment_ids.forEach((segmentId, rowIndex) => {
    const tr = doc.createElement("tr");
    const rowHead = doc.createElement("th");
    rowHead.textContent = segmentId;
    tr.appendChild(rowHead);
    view[rowIndex].forEach((cell, col) => {
      const td = doc.createElement("td");
      td.textContent = cell.value.toFixed(4);
      td.dataset.value = String(cell.value);
      td.dataset.segment = segmentId;
      td.dataset.classIndex = String(col);
      if (cell.bold) td.classList.add("best");
      if (cell.underlined) td.classList.add("runner-up");
      td.addEventListener("click", () => {
        callbacks.onCellClick?.(segmentId, col);
      });
      tr.appendChild(td);
    });
    table.appendChild(tr);
  });
  container.appendChild(table);
}
