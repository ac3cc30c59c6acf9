/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_demo_free: (a: number, b: number) => void;
export const demo_binActions: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const demo_describe: (a: number, b: number) => [number, number, number, number];
export const demo_imageSide: (a: number) => number;
export const demo_nStates: (a: number) => number;
export const demo_new: () => [number, number, number];
export const demo_plan: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const demo_render: (a: number, b: number, c: number) => [number, number, number, number];
export const demo_validActions: (a: number, b: number) => [number, number, number, number];
export const __wbindgen_export_0: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __externref_drop_slice: (a: number, b: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
