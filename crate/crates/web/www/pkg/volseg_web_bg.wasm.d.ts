/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_segmentation_free: (a: number, b: number) => void;
export const __wbg_transport_free: (a: number, b: number) => void;
export const segment_synthetic: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number) => [number, number, number];
export const segmentation_converged: (a: number) => number;
export const segmentation_dice: (a: number) => number;
export const segmentation_foreground_fraction: (a: number) => number;
export const segmentation_height: (a: number) => number;
export const segmentation_image_rgba: (a: number) => [number, number];
export const segmentation_iterations: (a: number) => number;
export const segmentation_labels_rgba: (a: number) => [number, number];
export const segmentation_mean_max_probability: (a: number) => number;
export const segmentation_soft_rgba: (a: number) => [number, number];
export const segmentation_width: (a: number) => number;
export const transport_cols: (a: number) => number;
export const transport_cost: (a: number) => number;
export const transport_coupling: (a: number) => [number, number];
export const transport_entropy: (a: number) => number;
export const transport_exact_cost: (a: number) => number;
export const transport_example: (a: number) => [number, number, number];
export const transport_residual: (a: number) => number;
export const transport_rows: (a: number) => number;
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
