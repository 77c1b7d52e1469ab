/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_scene_free: (a: number, b: number) => void;
export const scene_height: (a: number) => number;
export const scene_image_rgba: (a: number) => [number, number];
export const scene_loss_terms: (a: number, b: number, c: number, d: number, e: number) => [number, number];
export const scene_mask_rgba: (a: number) => [number, number];
export const scene_metrics: (a: number, b: number, c: number) => [number, number];
export const scene_new: (a: bigint, b: number) => [number, number, number];
export const scene_prediction_rgba: (a: number, b: number, c: number) => [number, number];
export const scene_reflected_rgba: (a: number, b: number) => [number, number];
export const scene_width: (a: number) => number;
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_start: () => void;
