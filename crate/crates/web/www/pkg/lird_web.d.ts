/* tslint:disable */
/* eslint-disable */

/**
 * `[x0, y0, x1, y1, ...]` for the simulator demo's items.
 */
export function demo_items(): Float64Array;

/**
 * Probabilities of skip, click and order when `action_item` is shown to a
 * user whose last positive was `state_item`.
 */
export function feedback_probabilities(state_item: number, action_item: number, alpha: number): Float64Array;

/**
 * Greedy list over 2-D items: slot `k` takes the best remaining item under
 * the `k`-th weight vector. `items` and `weights` are flat `[x, y, ...]`.
 */
export function greedy_list(items: Float64Array, weights: Float64Array): Uint32Array;

/**
 * `[ndcg, average precision, discounted list reward]` for per-slot rewards.
 */
export function list_metrics(rewards: Float64Array, gamma_pos: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly demo_items: () => [number, number];
    readonly feedback_probabilities: (a: number, b: number, c: number) => [number, number, number, number];
    readonly greedy_list: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly list_metrics: (a: number, b: number, c: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
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
