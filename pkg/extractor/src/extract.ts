/**
 * Extraction jobs: encode a dataset split (or a class-name/template grid)
 * into the engine's binary feature/label files plus a JSON manifest.
 */

import { readFileSync, writeFileSync } from "node:fs";
import { basename, dirname, relative } from "node:path";

import { listClasses, listSamples, sampleShots } from "./dataset.js";
import { Encoder, l2Normalize, loadEncoder } from "./encoder.js";
import { fnv1a } from "./rng.js";
import { writeFeatures, writeLabels } from "./tipf.js";

export type Split = "train" | "val" | "test";

export interface ExtractionJob {
  datasetRoot: string;
  split: Split;
  /** 0 = take every sample; otherwise class-balanced seeded selection */
  shotsPerClass: number;
  backbone: string;
  seed: number;
  /** pin the expected class list; extraction fails on disagreement */
  classNames?: string[];
  featuresPath: string;
  labelsPath: string;
  manifestPath?: string;
}

export interface TextJob {
  classNames: string[];
  /** prompt templates; "{}" is replaced with the class name */
  templates: string[];
  backbone: string;
  /** one output file per template: <outPrefix>.t<k>.tipf */
  outPrefix: string;
}

export interface ExtractionResult {
  rows: number;
  dim: number;
  classNames: string[];
}

function checkClassList(found: string[], pinned?: string[]): string[] {
  if (pinned && pinned.length > 0) {
    const same =
      pinned.length === found.length && pinned.every((n, i) => n === found[i]);
    if (!same) {
      throw new Error(
        `class-count mismatch: dataset has [${found.join(", ")}], ` +
          `job expects [${pinned.join(", ")}]`,
      );
    }
  }
  return found;
}

export function extractImageFeatures(job: ExtractionJob): ExtractionResult {
  if (job.shotsPerClass < 0) throw new Error("shotsPerClass must be >= 0");
  const encoder = loadEncoder(job.backbone);
  const classNames = checkClassList(
    listClasses(job.datasetRoot, job.split),
    job.classNames,
  );

  const rowsData: Float32Array[] = [];
  const labels: number[] = [];
  for (let c = 0; c < classNames.length; c++) {
    const all = listSamples(job.datasetRoot, job.split, classNames[c]);
    const files =
      job.shotsPerClass > 0
        ? sampleShots(all, classNames[c], job.shotsPerClass, job.seed)
        : all;
    if (files.length === 0) {
      throw new Error(`class "${classNames[c]}" has no samples`);
    }
    for (const file of files) {
      const content = readFileSync(file);
      const sampleSeed = fnv1a(`${job.seed}:${classNames[c]}:${basename(file)}`);
      const vec = encoder.encodeImage(content, {
        augment: job.split === "train",
        seed: sampleSeed,
      });
      rowsData.push(l2Normalize(vec));
      labels.push(c);
    }
  }

  const rows = rowsData.length;
  const data = new Float32Array(rows * encoder.dim);
  rowsData.forEach((row, i) => data.set(row, i * encoder.dim));
  writeFeatures(job.featuresPath, {
    rows,
    cols: encoder.dim,
    normalized: true,
    data,
  });
  writeLabels(job.labelsPath, {
    numClasses: classNames.length,
    labels: Uint32Array.from(labels),
  });
  if (job.manifestPath) {
    emitManifest(job.manifestPath, {
      featuresPath: job.featuresPath,
      labelsPath: job.labelsPath,
      classNames,
      split: job.split,
      shots: job.shotsPerClass,
    });
  }
  return { rows, dim: encoder.dim, classNames };
}

export function extractTextClassifier(job: TextJob): string[] {
  if (job.classNames.length === 0) throw new Error("missing class-name list");
  if (job.templates.length === 0) throw new Error("at least one template required");
  const encoder: Encoder = loadEncoder(job.backbone);
  const paths: string[] = [];
  job.templates.forEach((template, t) => {
    const data = new Float32Array(job.classNames.length * encoder.dim);
    job.classNames.forEach((name, c) => {
      const prompt = template.includes("{}")
        ? template.replaceAll("{}", name)
        : `${template} ${name}`;
      data.set(l2Normalize(encoder.encodeText(prompt)), c * encoder.dim);
    });
    const path = `${job.outPrefix}.t${t}.tipf`;
    writeFeatures(path, {
      rows: job.classNames.length,
      cols: encoder.dim,
      normalized: true,
      data,
    });
    paths.push(path);
  });
  return paths;
}

export interface ManifestFields {
  featuresPath: string;
  labelsPath: string;
  classNames: string[];
  split: Split;
  shots: number;
}

/** JSON manifest with paths relative to the manifest's own directory. */
export function emitManifest(path: string, fields: ManifestFields): void {
  const base = dirname(path);
  const doc = {
    features: relative(base, fields.featuresPath),
    labels: relative(base, fields.labelsPath),
    class_names: fields.classNames,
    split: fields.split,
    shots: fields.shots,
  };
  writeFileSync(path, JSON.stringify(doc, null, 2) + "\n");
}
