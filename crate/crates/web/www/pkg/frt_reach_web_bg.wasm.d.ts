/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_ditube_free: (a: number, b: number) => void;
export const compare1d: (a: number, b: number) => [number, number, number, number];
export const diTube: (a: number, b: number, c: number, d: number, e: number) => [number, number, number];
export const ditube_jaccard: (a: number) => number;
export const ditube_nx: (a: number) => number;
export const ditube_ny: (a: number) => number;
export const ditube_target: (a: number) => [number, number];
export const ditube_value: (a: number) => [number, number];
export const ditube_verdict: (a: number) => [number, number];
export const pendulumRun: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_start: () => void;
