/**
 * Subprocess bridge to the core CLI.
 *
 * The binding talks to the core exclusively through its public surface:
 * the `depthmix` executable plus the PFM/PNG/JSON file formats. Set
 * DEPTHMIX_BIN to point at a specific executable (e.g. inside a venv).
 */

import { execFileSync } from "node:child_process";

export class CoreError extends Error {
  constructor(message: string, public readonly exitCode: number | null) {
    super(message);
    this.name = "CoreError";
  }
}

export function coreBinary(): string {
  return process.env.DEPTHMIX_BIN ?? "depthmix";
}

export function runCli(args: string[]): string {
  try {
    return execFileSync(coreBinary(), args, {
      encoding: "utf-8",
      stdio: ["ignore", "pipe", "pipe"],
    });
  } catch (err) {
    const e = err as NodeJS.ErrnoException & {
      stderr?: string;
      stdout?: string;
      status?: number | null;
    };
    if (e.code === "ENOENT") {
      throw new CoreError(
        `core executable '${coreBinary()}' not found; install the package or set DEPTHMIX_BIN`,
        null,
      );
    }
    const detail = [e.stderr, e.stdout].filter(Boolean).join("\n").trim();
    throw new CoreError(detail || e.message, e.status ?? null);
  }
}

export function coreVersion(): string {
  const out = runCli(["--version"]).trim();
  const m = /(\d+\.\d+\.\S*)$/.exec(out);
  if (!m) throw new CoreError(`unexpected version output: ${out}`, null);
  return m[1];
}
