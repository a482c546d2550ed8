import { renameSync, writeFileSync } from "node:fs";

import { Encoder, loadEncoder } from "./encoder.js";
import { readStore, StoreEntry } from "./store.js";

export const VECTOR_FORMAT_VERSION = 1;

export interface ExportJob {
    storePath: string;
    encoderId: string;
    outPath: string;
    batchSize: number;
}

export interface ExportSummary {
    entriesWritten: number;
    dim: number;
    encoderId: string;
}

/**
 * Embed every store entry's display text and write the portable vector file:
 * one JSON header line, then one JSON line per entry, in store order.
 * The file lands via a temp-file rename so readers never see partial output.
 */
export function exportVectors(job: ExportJob): ExportSummary {
    if (!Number.isInteger(job.batchSize) || job.batchSize < 1) {
        throw new Error(`batch size must be a positive integer, got ${job.batchSize}`);
    }
    const encoder = loadEncoder(job.encoderId);
    const entries = readStore(job.storePath);

    const lines: string[] = [JSON.stringify({
        format_version: VECTOR_FORMAT_VERSION,
        dim: encoder.dim,
        encoder_id: encoder.id,
    })];
    for (const batch of batches(entries, job.batchSize)) {
        for (const entry of batch) {
            const vector = encoder.embed(entry.display);
            lines.push(JSON.stringify({
                system: entry.system,
                code: entry.code,
                vector: Array.from(vector),
            }));
        }
    }

    const tmpPath = `${job.outPath}.tmp`;
    writeFileSync(tmpPath, lines.join("\n") + "\n", "utf8");
    renameSync(tmpPath, job.outPath);
    return { entriesWritten: entries.length, dim: encoder.dim, encoderId: encoder.id };
}

function* batches(entries: StoreEntry[], size: number): Generator<StoreEntry[]> {
    for (let i = 0; i < entries.length; i += size) {
        yield entries.slice(i, i + size);
    }
}

export { Encoder, loadEncoder, readStore };
