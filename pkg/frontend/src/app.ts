// Console controller: submit -> watch stages -> review/grade -> feedback
// -> version diff -> approve. All state flows through the HTTP API.

import { ApiClient, ApiRequestError, NetworkUnavailableError } from './api';
import { diffReports } from './diff';
import { DEFAULT_POLL_INTERVAL_MS, watchJob, type Watcher } from './poller';
import type {
    ConsoleSession,
    EventDocument,
    FeedbackDraft,
    JobSummary,
    Report,
    WorkplanForm,
} from './types';
import {
    clear,
    renderApprovedBadge,
    renderBanner,
    renderDiff,
    renderEventDetail,
    renderEventsTable,
    renderHazardEditor,
    renderReport,
    renderStageIndicator,
    renderSubmitForm,
} from './views';

export interface AppRegions {
    main: HTMLElement;
    stages: HTMLElement;
    events: HTMLElement;
    hazards: HTMLElement;
    report: HTMLElement;
    diff: HTMLElement;
    detail: HTMLElement;
    banner: HTMLElement;
    actions: HTMLElement;
}

const emptyDraft = (author: string): FeedbackDraft => ({
    event_grades: {},
    hazard_edits: [],
    approved: false,
    author,
});

/** The slice of the client the app depends on (fakes implement this). */
export interface ApiLike {
    submitWorkplan(form: WorkplanForm, key?: string): Promise<{ job_id: string }>;
    getJob(jobId: string): Promise<JobSummary>;
    postFeedback(jobId: string, draft: FeedbackDraft, key?: string): Promise<JobSummary>;
    getReport(jobId: string, version?: number): Promise<Report>;
    getEvent(docId: string): Promise<EventDocument>;
}

export class ConsoleApp {
    readonly client: ApiLike;
    readonly regions: AppRegions;
    readonly pollIntervalMs: number;
    session: ConsoleSession;
    draft: FeedbackDraft;
    currentReport?: Report;
    knownVersions: number[] = [];
    author = 'sme';
    private watcher?: Watcher;

    constructor(
        session: ConsoleSession,
        regions: AppRegions,
        client?: ApiLike,
        pollIntervalMs: number = DEFAULT_POLL_INTERVAL_MS,
    ) {
        this.session = session;
        this.regions = regions;
        this.client = client ?? new ApiClient(session);
        this.pollIntervalMs = pollIntervalMs;
        this.draft = emptyDraft(this.author);
    }

    showSubmitView(): void {
        clear(this.regions.banner);
        renderSubmitForm(this.regions.main, (form) => void this.submit(form));
    }

    async submit(form: WorkplanForm): Promise<void> {
        clear(this.regions.banner);
        try {
            const created = await this.client.submitWorkplan(form);
            this.session.activeJobId = created.job_id;
            await this.openJob(created.job_id);
        } catch (err) {
            this.handleError(err, () => void this.submit(form));
        }
    }

    /** Open a job page with the live stage indicator polling the API. */
    async openJob(jobId: string): Promise<JobSummary | undefined> {
        this.session.activeJobId = jobId;
        this.watcher?.stop();
        this.watcher = watchJob(
            this.client,
            jobId,
            (job) => renderStageIndicator(this.regions.stages, job),
            this.pollIntervalMs,
        );
        try {
            const job = await this.watcher.done;
            if (job.stage === 'reported') {
                await this.showReview(job);
            }
            return job;
        } catch (err) {
            this.handleError(err, () => void this.openJob(jobId));
            return undefined;
        }
    }

    /** Load the latest report and render grading, hazards, and provenance. */
    async showReview(job: JobSummary): Promise<void> {
        const report = await this.client.getReport(job.job_id);
        this.currentReport = report;
        this.knownVersions = [...job.report_versions];
        this.draft = emptyDraft(this.author);
        renderReport(this.regions.report, report, (docId) => void this.showEvent(docId));
        renderEventsTable(this.regions.events, report.retrieved_events, this.draft, (docId) =>
            void this.showEvent(docId),
        );
        renderHazardEditor(this.regions.hazards, report.hazard_control_analysis.pairs, this.draft);
        this.renderActions(job);
        if (job.approved) {
            renderApprovedBadge(this.regions.actions);
        }
    }

    private renderActions(job: JobSummary): void {
        clear(this.regions.actions);
        const submit = document.createElement('button');
        submit.type = 'button';
        submit.setAttribute('data-testid', 'submit-feedback');
        submit.textContent = 'Submit feedback';
        submit.addEventListener('click', () => void this.submitFeedback(job.job_id, false));
        const approve = document.createElement('button');
        approve.type = 'button';
        approve.setAttribute('data-testid', 'approve');
        approve.textContent = 'Approve';
        approve.addEventListener('click', () => void this.submitFeedback(job.job_id, true));
        this.regions.actions.appendChild(submit);
        this.regions.actions.appendChild(approve);
    }

    async submitFeedback(jobId: string, approveOnly: boolean): Promise<void> {
        clear(this.regions.banner);
        const payload: FeedbackDraft = approveOnly
            ? { ...emptyDraft(this.author), approved: true }
            : { ...this.draft, author: this.author };
        const before = this.currentReport;
        try {
            // stale check: another session may have advanced the job
            const current = await this.client.getJob(jobId);
            if (
                this.knownVersions.length > 0 &&
                current.report_versions.length !== this.knownVersions.length
            ) {
                renderBanner(
                    this.regions.banner,
                    'newer report version exists; reload before grading',
                    () => void this.reload(jobId),
                );
                return;
            }
            const updated = await this.client.postFeedback(jobId, payload);
            await this.showReview(updated);
            const latest = this.currentReport;
            if (before && latest && latest.version > before.version) {
                renderDiff(
                    this.regions.diff,
                    diffReports(
                        before as unknown as Record<string, unknown>,
                        latest as unknown as Record<string, unknown>,
                    ),
                );
            }
        } catch (err) {
            if (err instanceof ApiRequestError && err.code === 'conflict') {
                renderBanner(this.regions.banner, `conflict: ${err.message}`, () =>
                    void this.reload(jobId),
                );
                return;
            }
            this.handleError(err, () => void this.submitFeedback(jobId, approveOnly));
        }
    }

    async reload(jobId: string): Promise<void> {
        clear(this.regions.banner);
        try {
            const job = await this.client.getJob(jobId);
            if (job.stage === 'reported') {
                await this.showReview(job);
            } else {
                await this.openJob(jobId);
            }
        } catch (err) {
            this.handleError(err, () => void this.reload(jobId));
        }
    }

    async showEvent(docId: string): Promise<void> {
        try {
            const doc = await this.client.getEvent(docId);
            renderEventDetail(this.regions.detail, doc);
        } catch (err) {
            this.handleError(err);
        }
    }

    private handleError(err: unknown, retry?: () => void): void {
        if (err instanceof NetworkUnavailableError) {
            renderBanner(this.regions.banner, 'service unreachable', retry);
            return;
        }
        if (err instanceof ApiRequestError) {
            renderBanner(this.regions.banner, `${err.code}: ${err.message}`, retry);
            return;
        }
        renderBanner(this.regions.banner, String(err), retry);
    }
}

/** Build the standard region layout inside a root element. */
export function mountRegions(root: HTMLElement): AppRegions {
    const make = (id: string): HTMLElement => {
        const node = document.createElement('section');
        node.id = id;
        root.appendChild(node);
        return node;
    };
    return {
        banner: make('banner'),
        main: make('main'),
        stages: make('stages'),
        actions: make('actions'),
        events: make('events'),
        hazards: make('hazards'),
        report: make('report'),
        diff: make('diff'),
        detail: make('detail'),
    };
}

export function bootstrap(root: HTMLElement, session: ConsoleSession): ConsoleApp {
    const app = new ConsoleApp(session, mountRegions(root));
    app.showSubmitView();
    return app;
}
