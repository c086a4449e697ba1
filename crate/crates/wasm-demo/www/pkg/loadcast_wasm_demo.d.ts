/* tslint:disable */
/* eslint-disable */

/**
 * Trains a small forecaster on a synthetic daily-cycle series, then rolls it forward.
 *
 * Returns `{"series", "test_start", "test_predicted", "forecast", "train_loss", "val_loss", "rmse"}`;
 * `series` is the raw signal and `test_predicted` lines up with `series[test_start..]`.
 */
export function forecast_demo(seed: number, noise: number, epochs: number, steps: number): string;

/**
 * Sinusoidal position table, row-major `[len × d_model]`.
 */
export function positional_encoding(len: number, d_model: number): Float64Array;

/**
 * Runs a 2-D swarm on `"sphere"` or `"rastrigin"` over [-5.12, 5.12]².
 *
 * Returns `{"evaluations": [{iteration, particle, x, y, fitness, gbest}], "best": [x, y], "best_fitness"}`.
 */
export function pso_run(objective: string, n_particles: number, t_max: number, w_max: number, w_min: number, seed: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly forecast_demo: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly positional_encoding: (a: number, b: number) => [number, number, number, number];
    readonly pso_run: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number, number];
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
