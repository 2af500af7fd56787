import { defineConfig } from 'vitest/config';

export default defineConfig({
    test: {
        globals: true,
        projects: [
            {
                test: {
                    name: 'unit',
                    globals: true,
                    environment: 'jsdom',
                    include: ['tests/**/*.test.ts'],
                    exclude: ['tests/e2e.test.ts', '**/node_modules/**'],
                },
            },
            {
                test: {
                    name: 'e2e',
                    globals: true,
                    environment: 'jsdom',
                    include: ['tests/e2e.test.ts'],
                    testTimeout: 120_000,
                    hookTimeout: 120_000,
                },
            },
        ],
    },
});
