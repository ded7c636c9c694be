import { ApiError } from "./api.js";
import type {
  AnswerResponse,
  DifferenceResponse,
  Report,
  SessionResponse,
} from "./types.js";

/** The slice of the HTTP client the store needs; satisfied by ApiClient. */
export interface ConsultationApi {
  startConsultation(text: string): Promise<SessionResponse>;
  answerQuestion(
    sessionId: string,
    questionId: string,
    affirmation: boolean,
  ): Promise<AnswerResponse>;
  fetchDifferences(subcategory: string): Promise<DifferenceResponse>;
}

export type Phase = "idle" | "starting" | "active" | "answering";

export interface Banner {
  message: string;
  retriable: boolean;
}

export interface StoreOptions {
  /** Pause before the single 409 retry; tests pass 0. */
  retryDelayMs?: number;
}

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

/**
 * Holds everything the page renders. All diagnosis content comes verbatim
 * from service responses; the store only tracks which response is current
 * and what the user is allowed to do next.
 */
export class ConsultationStore {
  phase: Phase = "idle";
  sessionId: string | null = null;
  enteredText = "";
  report: Report | null = null;
  features: string[] | null = null;
  confirmed: string[] = [];
  banner: Banner | null = null;
  validationMessage: string | null = null;
  /** True when the latest answer changed the L3 diagnosis. */
  highlightDiagnosis = false;
  /** True while waiting out a 409 before the single retry. */
  stepInProgress = false;
  differences: DifferenceResponse | null = null;
  differencesEmpty = false;

  private readonly retryDelayMs: number;
  private listeners: Array<() => void> = [];

  constructor(
    private readonly api: ConsultationApi,
    options: StoreOptions = {},
  ) {
    this.retryDelayMs = options.retryDelayMs ?? 400;
  }

  subscribe(listener: () => void): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }

  private notify(): void {
    for (const listener of this.listeners) {
      listener();
    }
  }

  async start(text: string): Promise<void> {
    if (this.phase === "starting" || this.phase === "answering") {
      return;
    }
    const trimmed = text.trim();
    if (!trimmed) {
      this.validationMessage = "Enter at least one manifestation to begin.";
      this.notify();
      return;
    }
    this.validationMessage = null;
    this.banner = null;
    this.enteredText = text;
    this.phase = "starting";
    this.notify();
    try {
      const response = await this.api.startConsultation(text);
      this.sessionId = response.session_id;
      this.report = response.report;
      this.features = null;
      this.confirmed = [];
      this.highlightDiagnosis = false;
      this.differences = null;
      this.differencesEmpty = false;
      this.phase = "active";
    } catch (exc) {
      this.banner = toBanner(exc);
      this.phase = "idle";
    }
    this.notify();
  }

  /** Reissue the last start after a retriable failure. */
  async retryStart(): Promise<void> {
    if (this.phase === "idle" && this.enteredText.trim()) {
      await this.start(this.enteredText);
    }
  }

  async answer(questionId: string, affirmation: boolean): Promise<void> {
    if (this.phase !== "active" || !this.sessionId || !this.report) {
      return;
    }
    const previousL3 = this.report.diagnosis_l3;
    this.banner = null;
    this.phase = "answering";
    this.notify();
    try {
      const response = await this.answerWithRetry(questionId, affirmation);
      this.report = response.report;
      this.features = response.features;
      this.confirmed = response.confirmed;
      this.highlightDiagnosis = response.report.diagnosis_l3 !== previousL3;
      this.differences = null;
      this.differencesEmpty = false;
    } catch (exc) {
      this.banner = toBanner(exc);
    }
    this.stepInProgress = false;
    this.phase = "active";
    this.notify();
  }

  private async answerWithRetry(questionId: string, affirmation: boolean) {
    const sessionId = this.sessionId as string;
    try {
      return await this.api.answerQuestion(sessionId, questionId, affirmation);
    } catch (exc) {
      if (exc instanceof ApiError && exc.status === 409) {
        this.stepInProgress = true;
        this.notify();
        await sleep(this.retryDelayMs);
        return await this.api.answerQuestion(sessionId, questionId, affirmation);
      }
      throw exc;
    }
  }

  async inspectDifferences(): Promise<void> {
    const subcategory = this.report?.subcategory_id;
    if (!subcategory) {
      return;
    }
    try {
      this.differences = await this.api.fetchDifferences(subcategory);
      this.differencesEmpty = false;
    } catch (exc) {
      if (exc instanceof ApiError && exc.status === 404) {
        this.differences = null;
        this.differencesEmpty = true;
      } else {
        this.banner = toBanner(exc);
      }
    }
    this.notify();
  }

  /** Drop the session and return to the entry form. */
  reset(): void {
    this.phase = "idle";
    this.sessionId = null;
    this.report = null;
    this.features = null;
    this.confirmed = [];
    this.banner = null;
    this.validationMessage = null;
    this.highlightDiagnosis = false;
    this.stepInProgress = false;
    this.differences = null;
    this.differencesEmpty = false;
    this.notify();
  }
}

function toBanner(exc: unknown): Banner {
  if (exc instanceof ApiError) {
    return { message: exc.detail, retriable: exc.retriable };
  }
  return { message: String(exc), retriable: false };
}
