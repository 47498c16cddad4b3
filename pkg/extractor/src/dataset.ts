/**
 * Dataset discovery and class-balanced, seeded shot sampling.
 *
 * Expected layout: <root>/<split>/<class>/<files> when a split directory
 * exists, otherwise <root>/<class>/<files> shared across splits. Classes
 * and files are enumerated in sorted order so extraction is reproducible.
 */

import { existsSync, readdirSync, statSync } from "node:fs";
import { join } from "node:path";

import { fnv1a, mulberry32, shuffle } from "./rng.js";

export function splitRoot(root: string, split: string): string {
  if (!existsSync(root)) throw new Error(`missing dataset: ${root}`);
  const withSplit = join(root, split);
  return existsSync(withSplit) && statSync(withSplit).isDirectory() ? withSplit : root;
}

export function listClasses(root: string, split: string): string[] {
  const base = splitRoot(root, split);
  const classes = readdirSync(base, { withFileTypes: true })
    .filter((e) => e.isDirectory())
    .map((e) => e.name)
    .sort();
  if (classes.length === 0) {
    throw new Error(`missing dataset: no class directories under ${base}`);
  }
  return classes;
}

export function listSamples(root: string, split: string, className: string): string[] {
  const dir = join(splitRoot(root, split), className);
  return readdirSync(dir, { withFileTypes: true })
    .filter((e) => e.isFile())
    .map((e) => join(dir, e.name))
    .sort();
}

/**
 * Pick exactly shots files per class with a per-class seeded shuffle.
 * The selection depends only on (seed, className, file names), so reruns
 * reproduce it byte for byte.
 */
export function sampleShots(files: string[], className: string, shots: number, seed: number): string[] {
  if (files.length < shots) {
    throw new Error(
      `class "${className}" has ${files.length} samples, need ${shots}`,
    );
  }
  const rng = mulberry32(fnv1a(`${seed}:${className}`));
  const picked = shuffle([...files], rng).slice(0, shots);
  return picked.sort();
}
