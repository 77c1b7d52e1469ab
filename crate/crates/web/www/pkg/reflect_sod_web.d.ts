/* tslint:disable */
/* eslint-disable */

export class Scene {
    free(): void;
    [Symbol.dispose](): void;
    height(): number;
    image_rgba(): Uint8Array;
    /**
     * `[wbce, sc, s1, total]` of the prediction.
     */
    loss_terms(softness: number, noise: number, mu: number, gamma: number): Float64Array;
    mask_rgba(): Uint8Array;
    /**
     * `[max-F, adaptive F, MAE, S, precision x 256, recall x 256]`.
     */
    metrics(softness: number, noise: number): Float64Array;
    constructor(seed: bigint, size: number);
    prediction_rgba(softness: number, noise: number): Uint8Array;
    /**
     * `k (M - X)` with `M` the per-channel image mean, drawn around mid-gray.
     */
    reflected_rgba(k: number): Uint8Array;
    width(): number;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_scene_free: (a: number, b: number) => void;
    readonly scene_height: (a: number) => number;
    readonly scene_image_rgba: (a: number) => [number, number];
    readonly scene_loss_terms: (a: number, b: number, c: number, d: number, e: number) => [number, number];
    readonly scene_mask_rgba: (a: number) => [number, number];
    readonly scene_metrics: (a: number, b: number, c: number) => [number, number];
    readonly scene_new: (a: bigint, b: number) => [number, number, number];
    readonly scene_prediction_rgba: (a: number, b: number, c: number) => [number, number];
    readonly scene_reflected_rgba: (a: number, b: number) => [number, number];
    readonly scene_width: (a: number) => number;
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __externref_table_dealloc: (a: number) => void;
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
