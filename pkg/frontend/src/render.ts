import type { ConsultationStore } from "./state.js";
import type { Report, Turn } from "./types.js";

// All service-provided strings are set through textContent so the rendered
// page shows response bytes unchanged.

function el(
  tag: string,
  className?: string,
  text?: string,
): HTMLElement {
  const node = document.createElement(tag);
  if (className) {
    node.className = className;
  }
  if (text !== undefined) {
    node.textContent = text;
  }
  return node;
}

function renderStartForm(store: ConsultationStore): HTMLElement {
  const section = el("section", "start-form");
  section.appendChild(el("p", "prompt", "Describe the patient's manifestations:"));
  const input = el("textarea") as HTMLTextAreaElement;
  input.id = "manifestation-input";
  input.rows = 4;
  input.value = store.enteredText;
  section.appendChild(input);
  const button = el("button", "primary", "Start consultation") as HTMLButtonElement;
  button.id = "start-button";
  button.disabled = store.phase === "starting";
  section.appendChild(button);
  if (store.validationMessage) {
    section.appendChild(el("p", "validation", store.validationMessage));
  }
  return section;
}

function renderBanner(store: ConsultationStore): HTMLElement {
  const banner = el("section", "banner");
  banner.appendChild(el("span", "banner-message", store.banner!.message));
  if (store.banner!.retriable) {
    const retry = el("button", "retry", "Retry") as HTMLButtonElement;
    retry.id = "retry-button";
    banner.appendChild(retry);
  }
  return banner;
}

function renderDiagnosis(report: Report, highlight: boolean): HTMLElement {
  const section = el("section", "diagnosis");
  const rows: Array<[string, string, string]> = [
    ["l1", "Category", report.diagnosis_l1],
    ["l2", "Subcategory", report.diagnosis_l2],
    ["l3", "Diagnosis", report.diagnosis_l3],
  ];
  for (const [level, caption, value] of rows) {
    const row = el("div", "diagnosis-row");
    row.dataset.level = level;
    if (level === "l3" && highlight) {
      row.classList.add("highlight");
    }
    row.appendChild(el("span", "caption", caption));
    row.appendChild(el("span", "value", value));
    section.appendChild(row);
  }
  section.appendChild(el("p", "reasoning", report.reasoning));
  if (report.off_graph) {
    section.appendChild(
      el("p", "off-graph-note", "This diagnosis falls outside the knowledge graph."),
    );
  }
  return section;
}

function renderList(caption: string, className: string, items: string[]): HTMLElement {
  const section = el("section", className);
  section.appendChild(el("h3", undefined, caption));
  const list = el("ul");
  for (const item of items) {
    list.appendChild(el("li", undefined, item));
  }
  section.appendChild(list);
  return section;
}

function renderQuestions(report: Report): HTMLElement {
  const section = el("section", "questions");
  section.appendChild(el("h3", undefined, "Follow-up questions"));
  if (report.follow_up_questions.length === 0) {
    section.appendChild(el("p", "no-questions", "No open questions."));
    return section;
  }
  for (const question of report.follow_up_questions) {
    const row = el("div", "question");
    row.dataset.questionId = question.question_id;
    row.appendChild(el("span", "question-text", question.text));
    const yes = el("button", "answer-yes", "Yes") as HTMLButtonElement;
    yes.dataset.questionId = question.question_id;
    const no = el("button", "answer-no", "No") as HTMLButtonElement;
    no.dataset.questionId = question.question_id;
    row.appendChild(yes);
    row.appendChild(no);
    section.appendChild(row);
  }
  return section;
}

/** Resolve an answered node id to its question text using server-sent turns. */
function questionTextFor(turns: Turn[], nodeId: string): string {
  for (const turn of turns) {
    for (const question of turn.questions) {
      if (question.node_id === nodeId) {
        return question.text;
      }
    }
  }
  return nodeId;
}

function renderHistory(report: Report): HTMLElement {
  const section = el("section", "history");
  section.appendChild(el("h3", undefined, "Turn history"));
  report.turns.forEach((turn, index) => {
    const block = el("div", "turn");
    block.appendChild(el("h4", undefined, `Turn ${index + 1}`));
    const asked = el("ul", "asked");
    for (const question of turn.questions) {
      asked.appendChild(el("li", undefined, question.text));
    }
    block.appendChild(asked);
    if (turn.answer) {
      const verdict = turn.answer.affirmation ? "yes" : "no";
      block.appendChild(
        el(
          "p",
          "answered",
          `Answered ${verdict}: ${questionTextFor(report.turns, turn.answer.node_id)}`,
        ),
      );
    }
    section.appendChild(block);
  });
  return section;
}

function renderDifferences(store: ConsultationStore): HTMLElement {
  const section = el("section", "differences");
  const heading = el("h3", undefined, "Diagnostic differences: ");
  heading.appendChild(el("span", "differences-label", store.differences!.label));
  section.appendChild(heading);
  const confirmed = new Set(store.confirmed);
  for (const group of store.differences!.groups) {
    const block = el("div", "difference-group");
    block.dataset.diseaseId = group.disease_id;
    block.appendChild(el("h4", undefined, group.disease_label));
    const list = el("ul");
    for (const feature of group.features) {
      const item = el("li", undefined, feature.label);
      if (confirmed.has(feature.label)) {
        item.classList.add("confirmed");
      }
      list.appendChild(item);
    }
    block.appendChild(list);
    section.appendChild(block);
  }
  return section;
}

export function render(root: HTMLElement, store: ConsultationStore): void {
  root.replaceChildren();
  root.appendChild(el("h1", undefined, "Diagnosis consultation"));
  if (store.banner) {
    root.appendChild(renderBanner(store));
  }
  if (!store.report) {
    root.appendChild(renderStartForm(store));
    return;
  }
  const report = store.report;
  root.appendChild(el("p", "entered-text", store.enteredText));
  root.appendChild(renderDiagnosis(report, store.highlightDiagnosis));
  if (report.treatments.length > 0) {
    root.appendChild(renderList("Treatments", "treatments", report.treatments));
  }
  if (report.medications.length > 0) {
    root.appendChild(renderList("Medications", "medications", report.medications));
  }
  if (store.features) {
    root.appendChild(renderList("Recorded manifestations", "features", store.features));
  }
  if (store.confirmed.length > 0) {
    root.appendChild(renderList("Confirmed by patient", "confirmed-list", store.confirmed));
  }
  if (store.stepInProgress) {
    root.appendChild(
      el("p", "step-progress", "A previous step is still in progress; retrying..."),
    );
  }
  root.appendChild(renderQuestions(report));
  root.appendChild(renderHistory(report));
  if (report.subcategory_id) {
    const inspect = el("button", "inspect", "Inspect differences") as HTMLButtonElement;
    inspect.id = "inspect-differences";
    root.appendChild(inspect);
  }
  if (store.differences) {
    root.appendChild(renderDifferences(store));
  }
  if (store.differencesEmpty) {
    root.appendChild(
      el("p", "differences-empty", "No diagnostic differences recorded for this subcategory."),
    );
  }
  const restart = el("button", "restart", "New consultation") as HTMLButtonElement;
  restart.id = "restart-button";
  root.appendChild(restart);
}

/** Attach the store to a root element: render on change, delegate clicks. */
export function mount(root: HTMLElement, store: ConsultationStore): () => void {
  const unsubscribe = store.subscribe(() => render(root, store));
  const onClick = (event: Event) => {
    const target = event.target as HTMLElement;
    if (target.id === "start-button") {
      const input = root.querySelector<HTMLTextAreaElement>("#manifestation-input");
      void store.start(input ? input.value : "");
    } else if (target.id === "retry-button") {
      void store.retryStart();
    } else if (target.classList.contains("answer-yes")) {
      void store.answer(target.dataset.questionId ?? "", true);
    } else if (target.classList.contains("answer-no")) {
      void store.answer(target.dataset.questionId ?? "", false);
    } else if (target.id === "inspect-differences") {
      void store.inspectDifferences();
    } else if (target.id === "restart-button") {
      store.reset();
    }
  };
  root.addEventListener("click", onClick);
  render(root, store);
  return () => {
    root.removeEventListener("click", onClick);
    unsubscribe();
  };
}
