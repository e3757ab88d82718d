/* tslint:disable */
/* eslint-disable */

/**
 * A file rebuilt from a damaged or truncated stream.
 */
export class Salvage {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    /**
     * The restored JPEG file.
     */
    bytes(): Uint8Array;
    clean(): boolean;
    kept_mcus(): number;
    total_mcus(): number;
}

/**
 * Encodes canvas pixels (RGBA, row major) as a baseline 4:2:0 JPEG with a
 * restart marker after every MCU. Sizes that are not multiples of 16 are
 * padded by edge replication.
 */
export function encode(rgba: Uint8Array, width: number, height: number, quality: number): Uint8Array;

/**
 * Segment table and per-MCU byte counts of a file, as JSON.
 */
export function inspect(jpeg: Uint8Array): string;

/**
 * Learns `merges` byte-pair merges from the file's own canonical stream
 * and reports how it tokenizes, as JSON.
 */
export function tokenize(jpeg: Uint8Array, merges: number, head: number): string;

/**
 * Keeps the MCUs covered by `ratio`, optionally appends `noise` bytes of
 * junk from a fixed generator, then restores the result. Whatever cannot
 * be decoded is filled with mid-gray.
 */
export function truncate_and_salvage(jpeg: Uint8Array, ratio: number, noise: number, seed: number): Salvage;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_salvage_free: (a: number, b: number) => void;
    readonly encode: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly inspect: (a: number, b: number) => [number, number, number, number];
    readonly salvage_bytes: (a: number) => [number, number];
    readonly salvage_clean: (a: number) => number;
    readonly salvage_kept_mcus: (a: number) => number;
    readonly salvage_total_mcus: (a: number) => number;
    readonly tokenize: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly truncate_and_salvage: (a: number, b: number, c: number, d: number, e: number) => [number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
