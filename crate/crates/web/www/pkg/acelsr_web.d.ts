/* tslint:disable */
/* eslint-disable */
export class Demo {
  free(): void;
  imageSide(): number;
  /**
   * Valid actions from a state as display strings.
   */
  validActions(state: number): string[];
  /**
   * Bins `n` uniformly random pick/place actions in the unit square and
   * reports the occupied bins as JSON.
   */
  binActions(n: number, bin_fraction: number, pick_only: boolean, seed: number): string;
  /**
   * Builds the world and a roadmap with one node per state and one edge
   * per valid transition.
   */
  constructor();
  /**
   * Up to `max_paths` shortest plans as JSON
   * `[{states: [..], labels: [..], actions: [..]}]`.
   */
  plan(start: number, goal: number, max_paths: number): string;
  /**
   * RGBA bytes of a noisy render (`side × side × 4`).
   */
  render(state: number, seed: number): Uint8Array;
  /**
   * Text form of a state, columns left to right, boxes bottom to top.
   */
  describe(state: number): string;
  nStates(): number;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
  readonly memory: WebAssembly.Memory;
  readonly __wbg_demo_free: (a: number, b: number) => void;
  readonly demo_binActions: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
  readonly demo_describe: (a: number, b: number) => [number, number, number, number];
  readonly demo_imageSide: (a: number) => number;
  readonly demo_nStates: (a: number) => number;
  readonly demo_new: () => [number, number, number];
  readonly demo_plan: (a: number, b: number, c: number, d: number) => [number, number, number, number];
  readonly demo_render: (a: number, b: number, c: number) => [number, number, number, number];
  readonly demo_validActions: (a: number, b: number) => [number, number, number, number];
  readonly __wbindgen_export_0: WebAssembly.Table;
  readonly __externref_table_dealloc: (a: number) => void;
  readonly __externref_drop_slice: (a: number, b: number) => void;
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
