// Typed client for the analysis service. Every mutation the console can
// perform goes through here; there are no side channels.

import type {
    ApiErrorBody,
    ConsoleSession,
    EventDocument,
    FeedbackDraft,
    JobSummary,
    Report,
    TraceEntry,
    WorkplanForm,
} from './types';

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiRequestError extends Error {
    readonly status: number;
    readonly code: ApiErrorBody['code'];
    readonly detail: string;

    constructor(status: number, body: ApiErrorBody) {
        super(body.message);
        this.status = status;
        this.code = body.code;
        this.detail = body.detail;
    }
}

export class NetworkUnavailableError extends Error {}

const randomKey = (): string =>
    `console-${Date.now().toString(36)}-${Math.random().toString(36).slice(2, 10)}`;

export class ApiClient {
    private readonly session: ConsoleSession;
    private readonly fetchImpl: FetchLike;

    constructor(session: ConsoleSession, fetchImpl?: FetchLike) {
        this.session = session;
        const impl = fetchImpl ?? (globalThis.fetch as FetchLike | undefined);
        if (!impl) {
            throw new Error('no fetch implementation available');
        }
        this.fetchImpl = impl.bind(globalThis);
    }

    private headers(idempotencyKey?: string): Record<string, string> {
        const headers: Record<string, string> = { 'Content-Type': 'application/json' };
        if (this.session.authToken) {
            headers['Authorization'] = `Bearer ${this.session.authToken}`;
        }
        if (idempotencyKey) {
            headers['Idempotency-Key'] = idempotencyKey;
        }
        return headers;
    }

    private async request<T>(
        method: string,
        path: string,
        body?: unknown,
        idempotencyKey?: string,
    ): Promise<T> {
        let response: Response;
        try {
            response = await this.fetchImpl(`${this.session.apiBaseUrl}${path}`, {
                method,
                headers: this.headers(idempotencyKey),
                body: body === undefined ? undefined : JSON.stringify(body),
            });
        } catch (err) {
            throw new NetworkUnavailableError(
                err instanceof Error ? err.message : 'network failure',
            );
        }
        if (!response.ok) {
            let parsed: ApiErrorBody;
            try {
                parsed = (await response.json()) as ApiErrorBody;
            } catch {
                parsed = { code: 'internal', message: `HTTP ${response.status}`, detail: '' };
            }
            throw new ApiRequestError(response.status, parsed);
        }
        return (await response.json()) as T;
    }

    async submitWorkplan(form: WorkplanForm, idempotencyKey?: string): Promise<{ job_id: string }> {
        return this.request('POST', '/workplans', form, idempotencyKey ?? randomKey());
    }

    async getJob(jobId: string): Promise<JobSummary> {
        return this.request('GET', `/jobs/${encodeURIComponent(jobId)}`);
    }

    async getTrace(jobId: string): Promise<{ job_id: string; trace: TraceEntry[] }> {
        return this.request('GET', `/jobs/${encodeURIComponent(jobId)}/trace`);
    }

    async postFeedback(
        jobId: string,
        draft: FeedbackDraft,
        idempotencyKey?: string,
    ): Promise<JobSummary> {
        return this.request(
            'POST',
            `/jobs/${encodeURIComponent(jobId)}/feedback`,
            draft,
            idempotencyKey ?? randomKey(),
        );
    }

    async getReport(jobId: string, version?: number): Promise<Report> {
        const suffix = version ? `?version=${version}` : '';
        return this.request('GET', `/reports/${encodeURIComponent(jobId)}${suffix}`);
    }

    async getEvent(docId: string): Promise<EventDocument> {
        return this.request('GET', `/events/${encodeURIComponent(docId)}`);
    }

    async health(): Promise<{ status: string }> {
        return this.request('GET', '/healthz');
    }
}
