// DOM builders. No framework: each view is a function that fills a
// container from endpoint payloads and wires callbacks.

import type { SectionDiff } from './diff';
import type {
    FeedbackDraft,
    Grade,
    HazardPair,
    JobSummary,
    Report,
    RetrievedEvent,
    WorkplanForm,
} from './types';
import { STAGES } from './types';

const el = <K extends keyof HTMLElementTagNameMap>(
    tag: K,
    attrs: Record<string, string> = {},
    text?: string,
): HTMLElementTagNameMap[K] => {
    const node = document.createElement(tag);
    for (const [key, value] of Object.entries(attrs)) {
        node.setAttribute(key, value);
    }
    if (text !== undefined) {
        node.textContent = text;
    }
    return node;
};

export function clear(container: HTMLElement): void {
    container.textContent = '';
}

// -- submit form -------------------------------------------------------------

export interface SubmitFormHandles {
    setError: (message: string) => void;
}

const FORM_FIELDS: Array<[keyof WorkplanForm, string, 'input' | 'textarea']> = [
    ['doc_id', 'Plan id', 'input'],
    ['event_name', 'Title', 'input'],
    ['event_date', 'Date (ISO)', 'input'],
    ['location', 'Location', 'input'],
    ['summary', 'Summary', 'textarea'],
    ['body', 'Body', 'textarea'],
];

export function renderSubmitForm(
    container: HTMLElement,
    onSubmit: (form: WorkplanForm) => void,
): SubmitFormHandles {
    clear(container);
    const form = el('form', { 'data-testid': 'workplan-form' });
    const inputs = new Map<string, HTMLInputElement | HTMLTextAreaElement>();
    for (const [name, label, kind] of FORM_FIELDS) {
        const row = el('div', { class: 'form-row' });
        row.appendChild(el('label', { for: `field-${name}` }, label));
        const input =
            kind === 'input'
                ? el('input', { id: `field-${name}`, name, type: 'text' })
                : el('textarea', { id: `field-${name}`, name });
        inputs.set(name, input);
        row.appendChild(input);
        form.appendChild(row);
    }
    const error = el('p', { class: 'inline-error', 'data-testid': 'form-error' });
    const submit = el('button', { type: 'submit', 'data-testid': 'submit-workplan' }, 'Analyze');
    form.appendChild(error);
    form.appendChild(submit);

    form.addEventListener('submit', (ev) => {
        ev.preventDefault();
        const values = Object.fromEntries(
            [...inputs.entries()].map(([name, input]) => [name, input.value.trim()]),
        ) as unknown as WorkplanForm;
        values.source_tag = 'workplan';
        if (!values.doc_id) {
            error.textContent = 'plan id is required';
            return;
        }
        if (!values.summary && !values.body) {
            // inline validation: no request leaves the browser
            error.textContent = 'summary or body must be non-empty';
            return;
        }
        error.textContent = '';
        onSubmit(values);
    });

    container.appendChild(form);
    return { setError: (message) => (error.textContent = message) };
}

// -- stage indicator ------------------------------------------------------------

export function renderStageIndicator(container: HTMLElement, job: JobSummary): void {
    clear(container);
    const list = el('ol', { class: 'stages', 'data-testid': 'stage-indicator' });
    const reached = STAGES.indexOf(job.stage as (typeof STAGES)[number]);
    STAGES.forEach((stage, position) => {
        const classes = ['stage'];
        if (job.stage === stage) {
            classes.push('current');
        }
        if (reached >= 0 && position < reached) {
            classes.push('done');
        }
        list.appendChild(el('li', { class: classes.join(' '), 'data-stage': stage }, stage));
    });
    container.appendChild(list);
    if (job.stage === 'failed') {
        container.appendChild(
            el('p', { class: 'stage-failed', 'data-testid': 'stage-failed' }, job.error ?? 'failed'),
        );
    }
}

// -- events grading table -----------------------------------------------------------

export function renderEventsTable(
    container: HTMLElement,
    events: RetrievedEvent[],
    draft: FeedbackDraft,
    onDocClick: (docId: string) => void,
): void {
    clear(container);
    const table = el('table', { class: 'events', 'data-testid': 'events-table' });
    const head = el('tr');
    for (const column of ['event', 'score', 'grade', 'status']) {
        head.appendChild(el('th', {}, column));
    }
    table.appendChild(head);

    for (const event of events) {
        const row = el('tr', { 'data-doc-id': event.doc_id });
        if (event.excluded) {
            row.className = 'excluded';
            row.style.textDecoration = 'line-through';
        }
        const link = el('a', { href: '#', class: 'doc-link', 'data-doc-id': event.doc_id }, event.doc_id);
        link.addEventListener('click', (ev) => {
            ev.preventDefault();
            onDocClick(event.doc_id);
        });
        const docCell = el('td');
        docCell.appendChild(link);
        row.appendChild(docCell);
        row.appendChild(el('td', {}, event.score.toFixed(4)));

        const select = el('select', { 'data-testid': `grade-${event.doc_id}` });
        for (const option of ['', '0', '1', '2']) {
            const opt = el('option', { value: option }, option === '' ? '-' : option);
            select.appendChild(opt);
        }
        const current = draft.event_grades[event.doc_id] ?? event.grade;
        if (current !== null && current !== undefined) {
            select.value = String(current);
        }
        select.addEventListener('change', () => {
            if (select.value === '') {
                delete draft.event_grades[event.doc_id];
            } else {
                draft.event_grades[event.doc_id] = Number(select.value) as Grade;
            }
        });
        const gradeCell = el('td');
        gradeCell.appendChild(select);
        row.appendChild(gradeCell);
        row.appendChild(el('td', {}, event.excluded ? 'excluded' : ''));
        table.appendChild(row);
    }
    container.appendChild(table);
}

// -- hazard editor -----------------------------------------------------------------

export function renderHazardEditor(
    container: HTMLElement,
    pairs: HazardPair[],
    draft: FeedbackDraft,
): void {
    clear(container);
    const list = el('ul', { class: 'hazards', 'data-testid': 'hazard-list' });
    for (const pair of pairs) {
        const item = el('li', { 'data-hazard': pair.hazard });
        item.appendChild(
            el('span', {}, `${pair.hazard} — ${pair.control ?? 'no control'} [${pair.provenance_doc_id}]`),
        );
        const remove = el('button', { type: 'button', class: 'remove-hazard' }, 'remove');
        remove.addEventListener('click', () => {
            draft.hazard_edits.push({ op: 'remove', hazard: pair.hazard });
            item.classList.add('pending-removal');
            remove.disabled = true;
        });
        const modify = el('button', { type: 'button', class: 'modify-hazard' }, 'edit');
        modify.addEventListener('click', () => {
            const replacement = window.prompt('Replace hazard text:', pair.hazard);
            if (replacement && replacement.trim() && replacement !== pair.hazard) {
                draft.hazard_edits.push({
                    op: 'modify',
                    hazard: pair.hazard,
                    new_hazard: replacement.trim(),
                });
                item.classList.add('pending-edit');
            }
        });
        item.appendChild(remove);
        item.appendChild(modify);
        list.appendChild(item);
    }
    container.appendChild(list);

    const addRow = el('div', { class: 'add-hazard' });
    const hazardInput = el('input', { type: 'text', placeholder: 'new hazard', 'data-testid': 'new-hazard' });
    const controlInput = el('input', { type: 'text', placeholder: 'control (optional)', 'data-testid': 'new-control' });
    const addButton = el('button', { type: 'button', 'data-testid': 'add-hazard' }, 'add hazard');
    addButton.addEventListener('click', () => {
        const hazard = hazardInput.value.trim();
        if (!hazard) {
            return;
        }
        draft.hazard_edits.push({
            op: 'add',
            hazard,
            control: controlInput.value.trim() || undefined,
        });
        hazardInput.value = '';
        controlInput.value = '';
        const note = el('li', { class: 'pending-add' }, `${hazard} (pending)`);
        list.appendChild(note);
    });
    addRow.appendChild(hazardInput);
    addRow.appendChild(controlInput);
    addRow.appendChild(addButton);
    container.appendChild(addRow);
}

// -- report view --------------------------------------------------------------------

export function renderReport(
    container: HTMLElement,
    report: Report,
    onDocClick: (docId: string) => void,
): void {
    clear(container);
    const heading = el(
        'h3',
        { 'data-testid': 'report-heading', 'data-version': String(report.version) },
        `Report ${report.report_id} (version ${report.version})`,
    );
    container.appendChild(heading);

    const profile = el('ul', { class: 'risk-profile', 'data-testid': 'risk-profile' });
    for (const [key, value] of Object.entries(report.overall_risk_profile)) {
        profile.appendChild(el('li', {}, `${key}: ${value}`));
    }
    container.appendChild(profile);

    const failures = el('div', { class: 'failures' });
    failures.appendChild(el('h4', {}, 'Failure modes'));
    for (const mode of report.critical_failures) {
        const row = el(
            'p',
            { class: mode.critical ? 'failure critical' : 'failure' },
            `${mode.description} (risk ${mode.risk}${mode.critical ? ', critical' : ''})`,
        );
        failures.appendChild(row);
    }
    container.appendChild(failures);

    const policies = el('div', { class: 'policies' });
    policies.appendChild(el('h4', {}, 'Policy mappings'));
    for (const match of report.policy_mappings.matches) {
        policies.appendChild(
            el('p', {}, `${match.subject_ref} -> ${match.policy_id} (${match.sim.toFixed(2)}): "${match.excerpt}"`),
        );
    }
    if (report.policy_mappings.unmapped.length > 0) {
        policies.appendChild(
            el('p', { class: 'unmapped' }, `unmapped: ${report.policy_mappings.unmapped.length} subjects`),
        );
    }
    container.appendChild(policies);

    // provenance links resolve through GET /events/{doc_id}
    const provenance = el('div', { class: 'provenance' });
    provenance.appendChild(el('h4', {}, 'Provenance'));
    const ids = new Set<string>();
    for (const pair of report.hazard_control_analysis.pairs) {
        ids.add(pair.provenance_doc_id);
    }
    for (const docId of [...ids].sort()) {
        const link = el('a', { href: '#', class: 'doc-link', 'data-doc-id': docId }, docId);
        link.addEventListener('click', (ev) => {
            ev.preventDefault();
            onDocClick(docId);
        });
        provenance.appendChild(link);
        provenance.appendChild(document.createTextNode(' '));
    }
    container.appendChild(provenance);

    if (report.narrative.text) {
        const narrative = el('div', { class: 'narrative' });
        narrative.appendChild(el('h4', {}, 'Narrative'));
        for (const para of report.narrative.text.split('\n\n')) {
            narrative.appendChild(el('p', {}, para));
        }
        container.appendChild(narrative);
    }
}

// -- diff view ---------------------------------------------------------------------

export function renderDiff(container: HTMLElement, sections: SectionDiff[]): void {
    clear(container);
    const wrap = el('div', { class: 'diff', 'data-testid': 'report-diff' });
    if (sections.length === 0) {
        wrap.appendChild(el('p', {}, 'no differences'));
    }
    for (const section of sections) {
        wrap.appendChild(el('h4', {}, section.section));
        const list = el('ul');
        for (const change of section.changes) {
            const text =
                change.kind === 'changed'
                    ? `${change.path}: ${JSON.stringify(change.before)} -> ${JSON.stringify(change.after)}`
                    : `${change.path}: ${change.kind}`;
            list.appendChild(el('li', { class: `diff-${change.kind}` }, text));
        }
        wrap.appendChild(list);
    }
    container.appendChild(wrap);
}

// -- chrome -------------------------------------------------------------------------

export function renderBanner(
    container: HTMLElement,
    message: string,
    onRetry?: () => void,
): void {
    clear(container);
    const banner = el('div', { class: 'banner', 'data-testid': 'banner' }, message);
    if (onRetry) {
        const retry = el('button', { type: 'button', 'data-testid': 'banner-retry' }, 'retry');
        retry.addEventListener('click', onRetry);
        banner.appendChild(retry);
    }
    container.appendChild(banner);
}

export function renderApprovedBadge(container: HTMLElement): void {
    container.appendChild(
        el('span', { class: 'approved-badge', 'data-testid': 'approved-badge' }, 'approved'),
    );
}

export function renderEventDetail(container: HTMLElement, doc: { doc_id: string; event_name: string; summary: string }): void {
    clear(container);
    container.appendChild(el('h4', { 'data-testid': 'event-detail' }, `${doc.doc_id}: ${doc.event_name}`));
    container.appendChild(el('p', {}, doc.summary));
}
