/**
 * Generates a small deterministic PNG corpus for conformance testing:
 * three classes of simple procedural textures, N train + N test images
 * each, in the single-domain folder layout.
 *
 * Usage: node dist/toycorpus.js --out DIR [--per-class N]
 */

import * as fs from "fs";
import * as path from "path";
import { PNG } from "pngjs";

const SIZE = 32;
const CLASSES = ["circles", "gradients", "stripes"];

function renderImage(className: string, variant: number): PNG {
  const png = new PNG({ width: SIZE, height: SIZE });
  // variants cycle within a small family (phase mod 3, brightness mod 2)
  // so disjoint train/test variant ranges stay in-distribution
  const phase = variant % 3;
  const jitter = 3 * (variant % 2);
  for (let y = 0; y < SIZE; y++) {
    for (let x = 0; x < SIZE; x++) {
      const i = (y * SIZE + x) * 4;
      let value: number;
      if (className === "stripes") {
        value = (x + phase) % 8 < 2 ? 225 - jitter : 35;
      } else if (className === "circles") {
        const dx = x - SIZE / 2;
        const dy = y - SIZE / 2;
        const ring = Math.floor(Math.sqrt(dx * dx + dy * dy)) + phase;
        value = ring % 6 < 3 ? 205 - jitter : 45;
      } else {
        value = 140 - jitter + ((x + y + 3 * phase) % 64);
      }
      png.data[i] = value;
      png.data[i + 1] = value;
      png.data[i + 2] = value;
      png.data[i + 3] = 255;
    }
  }
  // corner marker keeps every variant's bytes distinct
  png.data[0] = (variant * 17) % 256;
  return png;
}

function main(argv: string[]): number {
  const values = new Map<string, string>();
  for (let i = 0; i < argv.length; i += 2) {
    values.set(argv[i].replace(/^--/, ""), argv[i + 1]);
  }
  const out = values.get("out");
  if (!out) {
    console.error("usage: toycorpus --out DIR [--per-class N]");
    return 2;
  }
  const perClass = parseInt(values.get("per-class") ?? "5", 10);
  for (const split of ["train", "test"]) {
    for (const className of CLASSES) {
      const dir = path.join(out, split, className);
      fs.mkdirSync(dir, { recursive: true });
      for (let i = 0; i < perClass; i++) {
        // disjoint variant ranges, same texture family
        const variant = split === "train" ? i : perClass + 1 + i;
        const buf = PNG.sync.write(renderImage(className, variant));
        fs.writeFileSync(path.join(dir, `${className}_${variant}.png`), buf);
      }
    }
  }
  console.log(`wrote ${2 * CLASSES.length * perClass} images to ${out}`);
  return 0;
}

process.exit(main(process.argv.slice(2)));
