/* End-to-end checks through the compiler CLI: export the demo model,
 * record expected outputs with the reference interpreter, emit C trees,
 * and make sure the accelerated build agrees with the CPU-only one.
 *
 * Also pins this package's runtime sources to the copies the emitted
 * make.sh installs, so the two cannot drift apart silently. */

import { mkdtempSync, readFileSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, test } from "vitest";
import { CRT_ROOT, sh } from "./cc";

const PYTHON = process.env.PYTHON ?? "python3";
const HAVE_CC = sh(process.env.CC ?? "cc", ["--version"]).status === 0;

function cli(args: string[], cwd: string) {
  return sh(PYTHON, ["-m", "microforge", ...args], cwd);
}

/** Parse "name[i] = value" lines from a print-mode run_model binary. */
function printedOutputs(stdout: string): Map<string, number> {
  const vals = new Map<string, number>();
  for (const m of stdout.matchAll(/(\w+)\[(\d+)\] = ([-\w.+]+)/g)) {
    vals.set(`${m[1]}[${m[2]}]`, Number(m[3]));
  }
  return vals;
}

describe.skipIf(!HAVE_CC)("compiler pipeline", () => {
  let root: string;
  let cpuVerify: string;
  let accVerify: string;
  let cpuPrint: string;
  let accPrint: string;

  beforeAll(() => {
    root = mkdtempSync(join(tmpdir(), "crt-pipe-"));
    const model = join(root, "model.json");
    const ioDir = join(root, "io");
    const expDir = join(root, "ioexp");

    expect(cli(["zoo", "export-gesture", "--out", model, "--io-dir", ioDir], root).status).toBe(0);
    expect(
      cli(
        ["run-ref", "--model", model, "--io", join(ioDir, "manifest.json"), "--write-expected", expDir],
        root,
      ).status,
    ).toBe(0);

    const expected = join(expDir, "manifest.json");
    const plain = join(ioDir, "manifest.json");
    cpuVerify = join(root, "cpu_v");
    accVerify = join(root, "acc_v");
    cpuPrint = join(root, "cpu_p");
    accPrint = join(root, "acc_p");

    for (const [out, extra] of [
      [cpuVerify, ["--io", expected]],
      [accVerify, ["--io", expected, "--accel", "mac_engine"]],
      [cpuPrint, ["--io", plain]],
      [accPrint, ["--io", plain, "--accel", "mac_engine"]],
    ] as [string, string[]][]) {
      expect(cli(["compile", "--model", model, "--out", out, ...extra], root).status).toBe(0);
    }
  }, 120_000);

  afterAll(() => {
    if (root) {
      rmSync(root, { recursive: true, force: true });
    }
  });

  test("CPU build verifies against recorded outputs", () => {
    expect(cli(["verify", "--out", cpuVerify], root).status).toBe(0);
  }, 60_000);

  test("accelerated build verifies against recorded outputs", () => {
    expect(cli(["verify", "--out", accVerify], root).status).toBe(0);
  }, 60_000);

  test("accelerated outputs match the CPU-only build", () => {
    for (const dir of [cpuPrint, accPrint]) {
      expect(sh("bash", ["make.sh"], dir).status).toBe(0);
    }
    const cpu = printedOutputs(sh(join(cpuPrint, "run_model"), [], cpuPrint).stdout);
    const acc = printedOutputs(sh(join(accPrint, "run_model"), [], accPrint).stdout);
    expect(cpu.size).toBe(21);
    expect(acc.size).toBe(cpu.size);
    let gap = 0;
    for (const [key, val] of cpu) {
      const other = acc.get(key);
      expect(other).toBeDefined();
      gap = Math.max(gap, Math.abs(val - (other as number)));
    }
    expect(gap).toBeLessThanOrEqual(1e-5);
  }, 60_000);

  test("runtime sources here match the copies make.sh installs", () => {
    // verify has already built accVerify, so the installed files exist
    expect(cli(["verify", "--out", accVerify], root).status).toBe(0);
    const tree = join(accVerify, "tvm_model");
    for (const [here, there] of [
      [join(CRT_ROOT, "include", "tvm_crt.h"), join(tree, "include", "tvm_crt.h")],
      [join(CRT_ROOT, "source", "mock_accel.c"), join(tree, "source", "mock_accel.c")],
    ]) {
      expect(readFileSync(here, "utf8")).toBe(readFileSync(there, "utf8"));
    }
  }, 60_000);
});
