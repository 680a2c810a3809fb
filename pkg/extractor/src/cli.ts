/**
 * extract --input DIR --layout single|per-domain --encoder NAME --out DIR
 *
 * Encodes an image folder corpus and writes the EMB1 dataset (one
 * container per domain split plus manifest.json). Exit codes: 0 success,
 * 2 usage error, 1 extraction failure.
 */

import * as path from "path";
import { resolveEncoder } from "./encoders";
import { runExtraction } from "./extract";
import { scanCorpus } from "./images";

interface Args {
  input: string;
  layout: "single" | "per-domain";
  encoder: string;
  out: string;
  name?: string;
}

function parseArgs(argv: string[]): Args {
  const values = new Map<string, string>();
  for (let i = 0; i < argv.length; i += 2) {
    const key = argv[i];
    const value = argv[i + 1];
    if (!key.startsWith("--") || value === undefined) {
      throw new UsageError(`bad argument pair near '${key}'`);
    }
    values.set(key.slice(2), value);
  }
  const input = values.get("input");
  const out = values.get("out");
  if (!input || !out) {
    throw new UsageError("--input and --out are required");
  }
  const layout = values.get("layout") ?? "single";
  if (layout !== "single" && layout !== "per-domain") {
    throw new UsageError(`layout must be 'single' or 'per-domain', got '${layout}'`);
  }
  return {
    input,
    out,
    layout,
    encoder: values.get("encoder") ?? "vit-b-16",
    name: values.get("name"),
  };
}

class UsageError extends Error {}

export function main(argv: string[]): number {
  let args: Args;
  try {
    args = parseArgs(argv);
  } catch (err) {
    console.error(`usage error: ${(err as Error).message}`);
    console.error(
      "usage: extract --input DIR [--layout single|per-domain] " +
        "[--encoder NAME] --out DIR [--name NAME]",
    );
    return 2;
  }
  try {
    const encoder = resolveEncoder(args.encoder);
    const corpus = scanCorpus(args.input, args.layout);
    const result = runExtraction(
      corpus,
      encoder,
      args.out,
      args.name ?? path.basename(path.resolve(args.input)),
      (line) => console.error(line),
    );
    console.log(
      `encoded ${result.imagesEncoded} images (${result.imagesSkipped} skipped) ` +
        `into ${result.manifestPath} [dim ${encoder.width}]`,
    );
    return 0;
  } catch (err) {
    console.error(`error: ${(err as Error).message}`);
    return 1;
  }
}

if (require.main === module) {
  process.exit(main(process.argv.slice(2)));
}
