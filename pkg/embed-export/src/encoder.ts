import { createHash } from "node:crypto";

export class EncoderLoadError extends Error {}

export interface Encoder {
    readonly id: string;
    readonly dim: number;
    embed(text: string): Float64Array;
}

const HASH_TRIGRAM_RE = /^hash-trigram-v1-(\d+)$/;

/**
 * Deterministic hashed character-trigram encoder.
 *
 * The algorithm matches the pipeline's built-in fallback encoder, so files
 * exported with a "hash-trigram-v1-<dim>" id stay queryable by the consumer:
 * whitespace-normalized lowercase text padded with single spaces, each
 * trigram hashed with SHA-256, bucketed by the first 8 bytes (big-endian)
 * modulo dim with the top bit as sign, then L2-normalized.
 */
export class HashTrigramEncoder implements Encoder {
    readonly id: string;
    readonly dim: number;

    constructor(dim: number) {
        if (!Number.isInteger(dim) || dim < 8) {
            throw new EncoderLoadError(`dim must be an integer >= 8, got ${dim}`);
        }
        this.dim = dim;
        this.id = `hash-trigram-v1-${dim}`;
    }

    embed(text: string): Float64Array {
        if (!text) {
            throw new Error("text must be non-empty");
        }
        const padded = " " + text.toLowerCase().split(/\s+/).filter(Boolean).join(" ") + " ";
        const vec = new Float64Array(this.dim);
        for (let i = 0; i + 3 <= padded.length; i++) {
            const h = hash64(padded.slice(i, i + 3));
            const sign = (h >> 63n) & 1n ? -1 : 1;
            vec[Number(h % BigInt(this.dim))] += sign;
        }
        let norm = Math.sqrt(vec.reduce((acc, x) => acc + x * x, 0));
        if (norm === 0) {
            vec[Number(hash64(padded) % BigInt(this.dim))] = 1;
            norm = 1;
        }
        for (let i = 0; i < vec.length; i++) {
            vec[i] /= norm;
        }
        return vec;
    }
}

function hash64(text: string): bigint {
    const digest = createHash("sha256").update(text, "utf8").digest();
    return digest.readBigUInt64BE(0);
}

export function loadEncoder(id: string): Encoder {
    const match = HASH_TRIGRAM_RE.exec(id);
    if (!match) {
        throw new EncoderLoadError(
            `unknown encoder ${JSON.stringify(id)}; supported: hash-trigram-v1-<dim>`);
    }
    return new HashTrigramEncoder(parseInt(match[1], 10));
}
