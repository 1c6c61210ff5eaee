/* tslint:disable */
/* eslint-disable */

export class Segmentation {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Input image as RGBA bytes.
     */
    image_rgba(): Uint8Array;
    /**
     * Label map as RGBA bytes (fixed palette).
     */
    labels_rgba(): Uint8Array;
    /**
     * Foreground probability through a perceptual colormap, RGBA bytes.
     */
    soft_rgba(): Uint8Array;
    readonly converged: boolean;
    /**
     * Symmetric dice of the foreground against the ground truth.
     */
    readonly dice: number;
    /**
     * Soft foreground mass over the pixel count.
     */
    readonly foreground_fraction: number;
    readonly height: number;
    readonly iterations: number;
    readonly mean_max_probability: number;
    readonly width: number;
}

export class Transport {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Row-major `3 x 10` coupling.
     */
    coupling(): Float64Array;
    readonly cols: number;
    readonly cost: number;
    readonly entropy: number;
    readonly exact_cost: number;
    /**
     * Marginal residual when the solver stopped.
     */
    readonly residual: number;
    readonly rows: number;
}

export function segment_synthetic(kind: string, size: number, noise: number, seed: number, foreground_percent: number, eps: number, lambda: number): Segmentation;

export function transport_example(eps: number): Transport;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_segmentation_free: (a: number, b: number) => void;
    readonly __wbg_transport_free: (a: number, b: number) => void;
    readonly segment_synthetic: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number) => [number, number, number];
    readonly segmentation_converged: (a: number) => number;
    readonly segmentation_dice: (a: number) => number;
    readonly segmentation_foreground_fraction: (a: number) => number;
    readonly segmentation_height: (a: number) => number;
    readonly segmentation_image_rgba: (a: number) => [number, number];
    readonly segmentation_iterations: (a: number) => number;
    readonly segmentation_labels_rgba: (a: number) => [number, number];
    readonly segmentation_mean_max_probability: (a: number) => number;
    readonly segmentation_soft_rgba: (a: number) => [number, number];
    readonly segmentation_width: (a: number) => number;
    readonly transport_cols: (a: number) => number;
    readonly transport_cost: (a: number) => number;
    readonly transport_coupling: (a: number) => [number, number];
    readonly transport_entropy: (a: number) => number;
    readonly transport_exact_cost: (a: number) => number;
    readonly transport_example: (a: number) => [number, number, number];
    readonly transport_residual: (a: number) => number;
    readonly transport_rows: (a: number) => number;
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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
