/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_clusters_free: (a: number, b: number) => void;
export const band_edges: (a: number, b: number) => [number, number, number, number];
export const clusters_classes: (a: number) => number;
export const clusters_classify: (a: number, b: number, c: number, d: number, e: bigint) => [number, number, number, number];
export const clusters_label_map: (a: number, b: number, c: number, d: number, e: bigint) => [number, number, number, number];
export const clusters_new: (a: number, b: number, c: number, d: bigint) => [number, number, number];
export const clusters_points: (a: number) => [number, number];
export const keep_frequencies: (a: number, b: number, c: number, d: number, e: number, f: bigint) => [number, number, number, number];
export const sample_histogram: (a: number, b: number, c: number, d: bigint) => [number, number, number, number];
export const tree_depth: (a: number) => number;
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_start: () => void;
