// Wire-format types mirroring the service JSON exactly. Field names stay
// snake_case so every rendered string can be traced byte-for-byte to a
// response body.

export interface FollowUpQuestion {
  text: string;
  node_id: string;
  question_id: string;
}

export interface TurnQuestion {
  text: string;
  node_id: string;
}

export interface TurnAnswer {
  node_id: string;
  affirmation: boolean;
}

export interface Turn {
  questions: TurnQuestion[];
  answer: TurnAnswer | null;
}

export interface Report {
  diagnosis_l1: string;
  diagnosis_l2: string;
  diagnosis_l3: string;
  reasoning: string;
  treatments: string[];
  medications: string[];
  follow_up_questions: FollowUpQuestion[];
  confidence_flag: string;
  off_graph: boolean;
  subcategory_id: string | null;
  turns: Turn[];
}

export interface SessionResponse {
  session_id: string;
  report: Report;
}

export interface AnswerResponse {
  report: Report;
  features: string[];
  confirmed: string[];
}

export interface DifferenceFeature {
  id: string;
  label: string;
}

export interface DifferenceGroup {
  disease_id: string;
  disease_label: string;
  features: DifferenceFeature[];
}

export interface DifferenceResponse {
  subcategory: string;
  label: string;
  groups: DifferenceGroup[];
}

export interface HealthResponse {
  status: string;
  kg_nodes: number;
  index_size: number;
}
