#!/usr/bin/env node
import { exportVectors } from "./exporter.js";

const USAGE =
    "Usage: embed-export --store <store.jsonl> --encoder <id> --out <vecs.jsonl> [--batch N]";

function parseArgs(argv: string[]): Record<string, string> {
    const args: Record<string, string> = {};
    for (let i = 0; i < argv.length; i += 2) {
        const flag = argv[i];
        const value = argv[i + 1];
        if (!flag.startsWith("--") || value === undefined) {
            throw new Error(USAGE);
        }
        args[flag.slice(2)] = value;
    }
    return args;
}

try {
    const args = parseArgs(process.argv.slice(2));
    if (!args.store || !args.out) {
        throw new Error(USAGE);
    }
    const summary = exportVectors({
        storePath: args.store,
        encoderId: args.encoder ?? "hash-trigram-v1-256",
        outPath: args.out,
        batchSize: args.batch ? parseInt(args.batch, 10) : 64,
    });
    console.log(JSON.stringify({
        entries_written: summary.entriesWritten,
        dim: summary.dim,
        encoder_id: summary.encoderId,
    }));
} catch (err) {
    console.error((err as Error).message);
    process.exit(1);
}
