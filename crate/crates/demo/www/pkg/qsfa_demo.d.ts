/* tslint:disable */
/* eslint-disable */

/**
 * Labelled planar points drawn around evenly spaced centres.
 */
export class Clusters {
    free(): void;
    [Symbol.dispose](): void;
    classes(): number;
    /**
     * Classifies `(x, y)`. Returns `[label, shots, F_0.., F̂_0..]` with the
     * exact distances followed by their shot estimates.
     */
    classify(x: number, y: number, eta: number, seed: bigint): Float64Array;
    /**
     * Labels on a `cells × cells` grid over `[-extent, extent]²`, row-major
     * from the top-left corner.
     */
    label_map(cells: number, extent: number, eta: number, seed: bigint): Uint8Array;
    /**
     * `classes` Gaussian blobs of `per_class` points with standard deviation
     * `spread`, centred on a circle of radius 1.
     */
    constructor(classes: number, per_class: number, spread: number, seed: bigint);
    /**
     * Flat `[x, y, label, x, y, label, ...]`.
     */
    points(): Float64Array;
}

/**
 * Band boundaries `[θ, (1+δ)θ − δθ, (1+δ)θ, (1+δ)θ + δθ]`.
 */
export function band_edges(theta: number, delta: number): Float64Array;

/**
 * Fraction of `trials` noisy threshold decisions that keep each singular
 * value, with cutoff `(1 + δ)θ` and estimation precision `δθ`.
 */
export function keep_frequencies(sigma: Float64Array, theta: number, delta: number, trials: number, seed: bigint): Float64Array;

/**
 * Samples `draws` leaves of an amplitude tree over `values`. Returns the
 * exact probabilities followed by the empirical frequencies.
 */
export function sample_histogram(values: Float64Array, draws: number, seed: bigint): Float64Array;

/**
 * Depth of the tree over `len` leaves.
 */
export function tree_depth(len: number): number;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_clusters_free: (a: number, b: number) => void;
    readonly band_edges: (a: number, b: number) => [number, number, number, number];
    readonly clusters_classes: (a: number) => number;
    readonly clusters_classify: (a: number, b: number, c: number, d: number, e: bigint) => [number, number, number, number];
    readonly clusters_label_map: (a: number, b: number, c: number, d: number, e: bigint) => [number, number, number, number];
    readonly clusters_new: (a: number, b: number, c: number, d: bigint) => [number, number, number];
    readonly clusters_points: (a: number) => [number, number];
    readonly keep_frequencies: (a: number, b: number, c: number, d: number, e: number, f: bigint) => [number, number, number, number];
    readonly sample_histogram: (a: number, b: number, c: number, d: bigint) => [number, number, number, number];
    readonly tree_depth: (a: number) => number;
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
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
