/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_workbench_free: (a: number, b: number) => void;
export const legalRules: (a: number, b: number) => [number, number, number, number];
export const workbench_apply: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number];
export const workbench_draft: (a: number) => [number, number];
export const workbench_grammarSource: (a: number) => [number, number];
export const workbench_load: (a: number, b: number, c: number) => [number, number];
export const workbench_new: () => number;
export const workbench_palette: (a: number) => [number, number, number, number];
export const workbench_preview: (a: number) => [number, number, number, number];
export const workbench_reset: (a: number, b: number, c: number) => [number, number];
export const workbench_score: (a: number) => [number, number, number, number];
export const workbench_shapeTypes: (a: number) => [number, number];
export const workbench_suggest: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const workbench_undo: (a: number) => number;
export const workbench_violations: (a: number) => [number, number];
export const workbench_withGrammar: (a: number, b: number) => [number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
