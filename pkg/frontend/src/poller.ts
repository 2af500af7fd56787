// Polling helpers: the job API is async-create-then-poll, so the console
// watches GET /jobs/{id} on a fixed interval until a terminal stage.

import type { JobSummary } from './types';

export const DEFAULT_POLL_INTERVAL_MS = 2000;

export interface JobReader {
    getJob(jobId: string): Promise<JobSummary>;
}

export interface Watcher {
    stop: () => void;
    done: Promise<JobSummary>;
}

export const isTerminal = (stage: string): boolean =>
    stage === 'reported' || stage === 'failed';

/** Poll the job until reported/failed, invoking onUpdate on every sample. */
export function watchJob(
    client: JobReader,
    jobId: string,
    onUpdate: (job: JobSummary) => void,
    intervalMs: number = DEFAULT_POLL_INTERVAL_MS,
): Watcher {
    let stopped = false;
    let timer: ReturnType<typeof setTimeout> | undefined;

    const done = new Promise<JobSummary>((resolve, reject) => {
        const tick = async () => {
            if (stopped) {
                return;
            }
            let job: JobSummary;
            try {
                job = await client.getJob(jobId);
            } catch (err) {
                reject(err);
                return;
            }
            onUpdate(job);
            if (isTerminal(job.stage)) {
                resolve(job);
                return;
            }
            timer = setTimeout(tick, intervalMs);
        };
        void tick();
    });

    return {
        stop: () => {
            stopped = true;
            if (timer !== undefined) {
                clearTimeout(timer);
            }
        },
        done,
    };
}
