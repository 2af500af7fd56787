import { describe, expect, test } from 'vitest';

import { diffReports } from '../src/diff';

const baseReport = () => ({
    report_id: 'job-1.v1',
    job_id: 'job-1',
    version: 1,
    workplan_summary: { scope: 'replace seal' },
    retrieved_events: [
        { doc_id: 'evt-1', score: 0.9, grade: null as number | null, excluded: false },
        { doc_id: 'evt-2', score: 0.8, grade: null as number | null, excluded: false },
    ],
    hazard_control_analysis: { pairs: [{ hazard: 'arc flash' }] },
    critical_failures: [],
    policy_mappings: { matches: [], unmapped: [] },
    overall_risk_profile: { hazards_total: 1, hazards_uncovered: 1, critical_modes: 0, max_risk: 0 },
    narrative: { text: '', flagged_paragraphs: [], error: null },
});

describe('diffReports', () => {
    test('no changes yields an empty diff', () => {
        expect(diffReports(baseReport(), baseReport())).toEqual([]);
    });

    test('exclusion flip shows up under retrieved_events', () => {
        const after = baseReport();
        after.retrieved_events[0] = { doc_id: 'evt-1', score: 0.9, grade: 0, excluded: true };
        const sections = diffReports(baseReport(), after);
        expect(sections.map((s) => s.section)).toEqual(['retrieved_events']);
        const paths = sections[0].changes.map((c) => c.path);
        expect(paths).toContain('retrieved_events[0].excluded');
        expect(paths).toContain('retrieved_events[0].grade');
    });

    test('removed hazards and changed profile counted per section', () => {
        const after = baseReport();
        after.hazard_control_analysis = { pairs: [] };
        after.overall_risk_profile = { hazards_total: 0, hazards_uncovered: 0, critical_modes: 0, max_risk: 0 };
        const sections = diffReports(baseReport(), after);
        expect(sections.map((s) => s.section)).toEqual([
            'hazard_control_analysis',
            'overall_risk_profile',
        ]);
        const hazardChanges = sections[0].changes;
        expect(hazardChanges[0].kind).toBe('removed');
    });

    test('added array entries are reported as added', () => {
        const after = baseReport();
        after.retrieved_events = [...after.retrieved_events, { doc_id: 'evt-3', score: 0.1, grade: null, excluded: false }];
        const sections = diffReports(baseReport(), after);
        expect(sections[0].changes).toEqual([
            { path: 'retrieved_events[2]', kind: 'added', after: { doc_id: 'evt-3', score: 0.1, grade: null, excluded: false } },
        ]);
    });
});
