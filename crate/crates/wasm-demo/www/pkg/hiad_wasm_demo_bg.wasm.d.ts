/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_demo_free: (a: number, b: number) => void;
export const demo_assignment_rgba: (a: number, b: number) => [number, number, number, number];
export const demo_fit: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
export const demo_heatmap_rgba: (a: number, b: number, c: number) => [number, number, number, number];
export const demo_image_rgba: (a: number, b: number) => [number, number, number, number];
export const demo_new: (a: number, b: number, c: number, d: bigint) => [number, number, number];
export const demo_side: (a: number) => number;
export const demo_test_count: (a: number) => number;
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_start: () => void;
