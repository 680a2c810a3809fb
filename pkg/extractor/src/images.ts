/**
 * Image corpus scanning and PNG decoding.
 *
 * Two folder layouts:
 *   single:     root/{train,test}/<class_name>/*.png  -> one domain "single"
 *   per-domain: root/<domain>/{train,test}/<class_name>/*.png
 *
 * Class indices are assigned by sorting the union of class folder names;
 * unreadable files are skipped and counted rather than fatal.
 */

import * as fs from "fs";
import * as path from "path";
import { PNG } from "pngjs";

export interface DecodedImage {
  width: number;
  height: number;
  /** RGBA, 4 bytes per pixel. */
  rgba: Uint8Array;
}

export interface CorpusFile {
  path: string;
  domain: string;
  split: "train" | "test";
  className: string;
}

export interface Corpus {
  files: CorpusFile[];
  domains: string[];
  classNames: string[];
}

export function decodePng(filePath: string): DecodedImage {
  const png = PNG.sync.read(fs.readFileSync(filePath));
  return { width: png.width, height: png.height, rgba: png.data };
}

function listDirs(root: string): string[] {
  return fs
    .readdirSync(root, { withFileTypes: true })
    .filter((entry) => entry.isDirectory())
    .map((entry) => entry.name)
    .sort();
}

function listFiles(root: string): string[] {
  return fs
    .readdirSync(root, { withFileTypes: true })
    .filter((entry) => entry.isFile())
    .map((entry) => entry.name)
    .sort();
}

function scanDomain(root: string, domain: string): CorpusFile[] {
  const files: CorpusFile[] = [];
  for (const split of ["train", "test"] as const) {
    const splitDir = path.join(root, split);
    if (!fs.existsSync(splitDir)) continue;
    for (const className of listDirs(splitDir)) {
      for (const file of listFiles(path.join(splitDir, className))) {
        files.push({
          path: path.join(splitDir, className, file),
          domain,
          split,
          className,
        });
      }
    }
  }
  return files;
}

export function scanCorpus(root: string, layout: "single" | "per-domain"): Corpus {
  if (!fs.existsSync(root)) {
    throw new Error(`input directory not found: ${root}`);
  }
  let files: CorpusFile[] = [];
  let domains: string[];
  if (layout === "single") {
    domains = ["single"];
    files = scanDomain(root, "single");
  } else {
    domains = listDirs(root);
    if (domains.length === 0) {
      throw new Error(`no domain subdirectories under ${root}`);
    }
    for (const domain of domains) {
      files = files.concat(scanDomain(path.join(root, domain), domain));
    }
  }
  if (files.length === 0) {
    throw new Error(`no images found under ${root} with layout ${layout}`);
  }
  const classNames = [...new Set(files.map((f) => f.className))].sort();
  return { files, domains, classNames };
}
