/* tslint:disable */
/* eslint-disable */

/**
 * A double-integrator forward tube.
 */
export class DiTube {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    jaccard(): number;
    nx(): number;
    ny(): number;
    /**
     * Target values, row-major with the position axis outermost.
     */
    target(): Float64Array;
    value(): Float64Array;
    verdict(): string;
}

export function compare1d(gamma: number, points: number): Float64Array;

export function diTube(set: string, gamma: number, nx: number, ny: number): DiTube;

export function pendulumRun(x1: number, x2: number, t_final: number, filtered: boolean): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_ditube_free: (a: number, b: number) => void;
    readonly compare1d: (a: number, b: number) => [number, number, number, number];
    readonly diTube: (a: number, b: number, c: number, d: number, e: number) => [number, number, number];
    readonly ditube_jaccard: (a: number) => number;
    readonly ditube_nx: (a: number) => number;
    readonly ditube_ny: (a: number) => number;
    readonly ditube_target: (a: number) => [number, number];
    readonly ditube_value: (a: number) => [number, number];
    readonly ditube_verdict: (a: number) => [number, number];
    readonly pendulumRun: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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
