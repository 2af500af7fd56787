// Section-wise structural diff of two canonical report JSON objects.
// SMEs need to see exactly what their feedback changed between versions.

export interface Change {
    path: string;
    kind: 'added' | 'removed' | 'changed';
    before?: unknown;
    after?: unknown;
}

export interface SectionDiff {
    section: string;
    changes: Change[];
}

const isPlainObject = (value: unknown): value is Record<string, unknown> =>
    typeof value === 'object' && value !== null && !Array.isArray(value);

function walk(path: string, before: unknown, after: unknown, out: Change[]): void {
    if (JSON.stringify(before) === JSON.stringify(after)) {
        return;
    }
    if (isPlainObject(before) && isPlainObject(after)) {
        const keys = new Set([...Object.keys(before), ...Object.keys(after)]);
        for (const key of [...keys].sort()) {
            const sub = path ? `${path}.${key}` : key;
            if (!(key in before)) {
                out.push({ path: sub, kind: 'added', after: after[key] });
            } else if (!(key in after)) {
                out.push({ path: sub, kind: 'removed', before: before[key] });
            } else {
                walk(sub, before[key], after[key], out);
            }
        }
        return;
    }
    if (Array.isArray(before) && Array.isArray(after)) {
        const longest = Math.max(before.length, after.length);
        for (let i = 0; i < longest; i += 1) {
            const sub = `${path}[${i}]`;
            if (i >= before.length) {
                out.push({ path: sub, kind: 'added', after: after[i] });
            } else if (i >= after.length) {
                out.push({ path: sub, kind: 'removed', before: before[i] });
            } else {
                walk(sub, before[i], after[i], out);
            }
        }
        return;
    }
    out.push({ path, kind: 'changed', before, after });
}

const SECTIONS = [
    'workplan_summary',
    'retrieved_events',
    'hazard_control_analysis',
    'critical_failures',
    'policy_mappings',
    'overall_risk_profile',
    'narrative',
];

/** Diff two report payloads section by section; unchanged sections are omitted. */
export function diffReports(
    before: Record<string, unknown>,
    after: Record<string, unknown>,
): SectionDiff[] {
    const out: SectionDiff[] = [];
    for (const section of SECTIONS) {
        const changes: Change[] = [];
        walk(section, before[section], after[section], changes);
        if (changes.length > 0) {
            out.push({ section, changes });
        }
    }
    return out;
}
