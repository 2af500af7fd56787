// DTOs for the analysis service HTTP API. The console renders nothing
// that does not come from these documented endpoint payloads.

export type Grade = 0 | 1 | 2;

export const STAGES = [
    'created',
    'summarized',
    'retrieved',
    'hazards_extracted',
    'coverage_done',
    'fmea_done',
    'policies_done',
    'reported',
] as const;

export type Stage = (typeof STAGES)[number] | 'failed';

export interface WorkplanForm {
    doc_id: string;
    event_name: string;
    event_date: string;
    location: string;
    summary: string;
    body: string;
    source_tag: string;
}

export interface JobSummary {
    job_id: string;
    workplan_doc_id: string;
    stage: Stage;
    report_versions: number[];
    error: string | null;
    approved: boolean;
    feedback_count: number;
}

export interface TraceEntry {
    agent_name: string;
    attempt: number;
    started_at: number;
    ended_at: number;
    input_digest: string;
    output_digest: string;
    status: 'ok' | 'retried' | 'failed';
    note: string;
}

export interface RetrievedEvent {
    doc_id: string;
    score: number;
    grade: Grade | null;
    excluded: boolean;
}

export interface HazardPair {
    hazard: string;
    control: string | null;
    provenance_doc_id: string;
    confidence: number;
}

export interface CoverageEntry {
    hazard: string;
    control: string;
    match_score: number;
}

export interface FailureMode {
    description: string;
    causes: string[];
    effects: string[];
    severity: number;
    likelihood: number;
    risk: number;
    critical: boolean;
    mitigations: string[];
}

export interface PolicyMatch {
    subject_ref: string;
    policy_id: string;
    sim: number;
    excerpt: string;
}

export interface Report {
    report_id: string;
    job_id: string;
    version: number;
    workplan_summary: {
        workplan_doc_id: string;
        scope: string;
        components: string[];
        operational_context: string;
        controls_mentioned: string[];
    };
    retrieved_events: RetrievedEvent[];
    hazard_control_analysis: {
        pairs: HazardPair[];
        coverage: {
            covered: CoverageEntry[];
            uncovered: string[];
            weak: CoverageEntry[];
        };
    };
    critical_failures: FailureMode[];
    policy_mappings: { matches: PolicyMatch[]; unmapped: string[] };
    overall_risk_profile: {
        hazards_total: number;
        hazards_uncovered: number;
        critical_modes: number;
        max_risk: number;
    };
    narrative: { text: string; flagged_paragraphs: number[]; error: string | null };
}

export interface HazardEdit {
    op: 'add' | 'remove' | 'modify';
    hazard: string;
    control?: string;
    new_hazard?: string;
}

export interface FeedbackDraft {
    event_grades: Record<string, Grade>;
    hazard_edits: HazardEdit[];
    approved: boolean;
    author: string;
}

export interface EventDocument {
    doc_id: string;
    event_name: string;
    event_date: string;
    location: string;
    summary: string;
    body: string;
    source_tag: string;
}

export interface ApiErrorBody {
    code: 'validation' | 'not_found' | 'conflict' | 'backend_unavailable' | 'internal';
    message: string;
    detail: string;
}

export interface ConsoleSession {
    apiBaseUrl: string;
    authToken?: string;
    activeJobId?: string;
}
