/* tslint:disable */
/* eslint-disable */

/**
 * A synthetic category and, once fitted, a model for it.
 */
export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Test image blended with the color of the detector handling each patch.
     */
    assignment_rgba(index: number): Uint8Array;
    /**
     * Fits a model with the given routing strategy, pool size and fusion
     * weights for rates 0 and 1 (rescaled to sum to one). Returns a one-line
     * summary.
     */
    fit(strategy: string, detectors: number, w0: number, w1: number): string;
    /**
     * RGBA heatmap of a test image, optionally without the whole-image branch.
     */
    heatmap_rgba(index: number, low_res: boolean): Uint8Array;
    /**
     * RGBA pixels of a test image.
     */
    image_rgba(index: number): Uint8Array;
    /**
     * Generates 256x256 training images and defective test images.
     */
    constructor(texture_name: string, contrast: number, seed: bigint);
    side(): number;
    test_count(): number;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly demo_assignment_rgba: (a: number, b: number) => [number, number, number, number];
    readonly demo_fit: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly demo_heatmap_rgba: (a: number, b: number, c: number) => [number, number, number, number];
    readonly demo_image_rgba: (a: number, b: number) => [number, number, number, number];
    readonly demo_new: (a: number, b: number, c: number, d: bigint) => [number, number, number];
    readonly demo_side: (a: number) => number;
    readonly demo_test_count: (a: number) => number;
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
