// Browser entry point. The API base defaults to the serving origin (the
// bundle is meant to be mounted at /console by the analysis service) and
// can be overridden via localStorage for development against another host.

import { bootstrap } from './app';

const root = document.getElementById('app');
if (!root) {
    throw new Error('missing #app container');
}
const apiBaseUrl = window.localStorage.getItem('harness_api') ?? window.location.origin;
const authToken = window.localStorage.getItem('harness_token') ?? undefined;
bootstrap(root, { apiBaseUrl, authToken });
