/** Shared plumbing for integration tests: spawn the real annotation
 *  service over a seeded store, and inspect its artifacts afterwards. */

import { spawn, spawnSync, type ChildProcess } from "node:child_process";
import { mkdtempSync, readFileSync } from "node:fs";
import net from "node:net";
import { tmpdir } from "node:os";
import { join } from "node:path";

const PYTHON = process.env.CAPRANK_PYTHON ?? "python3";

export function seedStore(captions: string[] = ["a", "b", "c"]): string {
  const dir = mkdtempSync(join(tmpdir(), "caprank-ui-"));
  const storePath = join(dir, "store.log");
  const script = `
import sys
from caprank.store import PreferenceDataset, ImageEntry, CaptionCandidate
store = PreferenceDataset.create(sys.argv[1], store_id="ui-test")
store.add_image(ImageEntry("img1", "https://example.org/img1.jpg"))
for cid in sys.argv[2:]:
    store.add_caption(CaptionCandidate(cid, "img1", f"the {cid} caption"))
store.close()
`;
  const result = spawnSync(PYTHON, ["-c", script, storePath, ...captions], {
    encoding: "utf-8",
  });
  if (result.status !== 0) throw new Error(`seedStore failed: ${result.stderr}`);
  return storePath;
}

async function freePort(): Promise<number> {
  return new Promise((resolve, reject) => {
    const server = net.createServer();
    server.listen(0, "127.0.0.1", () => {
      const address = server.address();
      if (address && typeof address === "object") {
        const port = address.port;
        server.close(() => resolve(port));
      } else {
        reject(new Error("no port assigned"));
      }
    });
  });
}

export interface ServiceHandle {
  baseUrl: string;
  storePath: string;
  stop: () => void;
}

export async function startService(
  storePath: string,
  options: { leaseTtl?: number; labelers?: string; replication?: number } = {},
): Promise<ServiceHandle> {
  const port = await freePort();
  const args = [
    "-m", "caprank.cli", "serve",
    "--store", storePath,
    "--port", String(port),
    "--lease-ttl", String(options.leaseTtl ?? 1800),
  ];
  if (options.labelers) args.push("--labelers", options.labelers);
  if (options.replication) args.push("--replication", String(options.replication));

  const proc: ChildProcess = spawn(PYTHON, args, { stdio: ["ignore", "pipe", "pipe"] });
  let stderr = "";
  proc.stderr?.on("data", (chunk) => (stderr += chunk));

  const baseUrl = `http://127.0.0.1:${port}`;
  const deadline = Date.now() + 15_000;
  for (;;) {
    try {
      const response = await fetch(`${baseUrl}/health`);
      if (response.ok) break;
    } catch {
      /* not up yet */
    }
    if (Date.now() > deadline) {
      proc.kill();
      throw new Error(`service did not come up on ${baseUrl}: ${stderr}`);
    }
    await new Promise((r) => setTimeout(r, 150));
  }
  return { baseUrl, storePath, stop: () => proc.kill("SIGTERM") };
}

/** Ranked records currently in a store log, straight off the disk format. */
export function readStoredRankings(storePath: string): Array<{
  record_id: string;
  labeler_id: string;
  ranking: string[][];
}> {
  const lines = readFileSync(storePath, "utf-8").split("\n").filter(Boolean);
  return lines
    .map((line) => JSON.parse(line))
    .filter((entry) => entry.kind === "record")
    .map((entry) => ({
      record_id: entry.record_id,
      labeler_id: entry.labeler_id,
      ranking: entry.ranking,
    }));
}

/** Run the pair generator CLI over a store and return (pref, disp) tuples. */
export function runPairgen(storePath: string): Array<[string, string]> {
  const out = join(mkdtempSync(join(tmpdir(), "caprank-pairs-")), "pairs.tsv");
  const result = spawnSync(
    PYTHON,
    ["-m", "caprank.cli", "pairgen", "--store", storePath, "--out", out],
    { encoding: "utf-8" },
  );
  if (result.status !== 0) throw new Error(`pairgen failed: ${result.stderr}`);
  const lines = readFileSync(out, "utf-8").split("\n").filter(Boolean).slice(1);
  return lines.map((line) => {
    const cols = line.split("\t");
    return [cols[1]!, cols[2]!] as [string, string];
  });
}
