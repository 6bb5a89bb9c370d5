/* tslint:disable */
/* eslint-disable */

export class Workbench {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Appends one rule application, or explains which constraint it breaks.
     */
    apply(rule_id: string, host: number, params_json: string): void;
    draft(): string;
    grammarSource(): string;
    /**
     * Replaces the draft; it must replay cleanly.
     */
    load(draft_json: string): void;
    /**
     * The drone fixture with an empty four-motor draft.
     */
    constructor();
    /**
     * Every rule of the grammar, enabled when it is legal next.
     */
    palette(): string;
    /**
     * Triangle mesh of the draft as OBJ text, plus per-part metadata.
     */
    preview(): string;
    /**
     * Starts an empty draft of `shape_type`.
     */
    reset(shape_type: string): void;
    /**
     * Posterior that the sink concept is high, given the draft's evidence.
     */
    score(): string;
    shapeTypes(): string;
    /**
     * Parameter values for `rule_id` on `host` that pass every prefix check.
     */
    suggest(rule_id: string, host: number): string;
    /**
     * Drops the last application; false when the draft is already empty.
     */
    undo(): boolean;
    /**
     * Whole-design violations: empty once the draft is a finished design.
     */
    violations(): string;
    /**
     * A workbench over another grammar; scoring still uses the drone causal map.
     */
    static withGrammar(source: string): Workbench;
}

/**
 * Legal rules of an arbitrary draft under the fixture grammar, in the
 * service's `/grammar/legal-rules` shape.
 */
export function legalRules(draft_json: string): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_workbench_free: (a: number, b: number) => void;
    readonly legalRules: (a: number, b: number) => [number, number, number, number];
    readonly workbench_apply: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number];
    readonly workbench_draft: (a: number) => [number, number];
    readonly workbench_grammarSource: (a: number) => [number, number];
    readonly workbench_load: (a: number, b: number, c: number) => [number, number];
    readonly workbench_new: () => number;
    readonly workbench_palette: (a: number) => [number, number, number, number];
    readonly workbench_preview: (a: number) => [number, number, number, number];
    readonly workbench_reset: (a: number, b: number, c: number) => [number, number];
    readonly workbench_score: (a: number) => [number, number, number, number];
    readonly workbench_shapeTypes: (a: number) => [number, number];
    readonly workbench_suggest: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly workbench_undo: (a: number) => number;
    readonly workbench_violations: (a: number) => [number, number];
    readonly workbench_withGrammar: (a: number, b: number) => [number, number, number];
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
