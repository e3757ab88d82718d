/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_salvage_free: (a: number, b: number) => void;
export const encode: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const inspect: (a: number, b: number) => [number, number, number, number];
export const salvage_bytes: (a: number) => [number, number];
export const salvage_clean: (a: number) => number;
export const salvage_kept_mcus: (a: number) => number;
export const salvage_total_mcus: (a: number) => number;
export const tokenize: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const truncate_and_salvage: (a: number, b: number, c: number, d: number, e: number) => [number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
