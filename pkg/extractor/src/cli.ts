/**
 * Extraction CLI.
 *
 *   extract-images --root DIR --split train --shots 8 --backbone bag-v1-64 \
 *     --seed 0 --out-features f.tipf --out-labels l.tipl [--out-manifest m.json]
 *
 *   extract-text --classes a,b,c --templates "a photo of a {}." \
 *     --backbone bag-v1-64 --out-prefix text
 */

import { parseArgs } from "node:util";

import { extractImageFeatures, extractTextClassifier, Split } from "./extract.js";

function fail(message: string): never {
  console.error(`error: ${message}`);
  process.exit(1);
}

function required(values: Record<string, unknown>, name: string): string {
  const v = values[name];
  if (typeof v !== "string" || v === "") fail(`--${name} is required`);
  return v;
}

function runImages(argv: string[]): void {
  const { values } = parseArgs({
    args: argv,
    options: {
      root: { type: "string" },
      split: { type: "string", default: "train" },
      shots: { type: "string", default: "0" },
      backbone: { type: "string", default: "bag-v1-64" },
      seed: { type: "string", default: "0" },
      "out-features": { type: "string" },
      "out-labels": { type: "string" },
      "out-manifest": { type: "string" },
      classes: { type: "string" },
    },
  });
  const split = values.split as string;
  if (!["train", "val", "test"].includes(split)) {
    fail(`--split must be train|val|test, got ${split}`);
  }
  const result = extractImageFeatures({
    datasetRoot: required(values, "root"),
    split: split as Split,
    shotsPerClass: parseInt(values.shots as string, 10),
    backbone: values.backbone as string,
    seed: parseInt(values.seed as string, 10),
    classNames: values.classes ? (values.classes as string).split(",") : undefined,
    featuresPath: required(values, "out-features"),
    labelsPath: required(values, "out-labels"),
    manifestPath: values["out-manifest"] as string | undefined,
  });
  console.log(
    `wrote ${result.rows} rows x ${result.dim} dims over ` +
      `${result.classNames.length} classes`,
  );
}

function runText(argv: string[]): void {
  const { values } = parseArgs({
    args: argv,
    options: {
      classes: { type: "string" },
      templates: { type: "string", multiple: true },
      backbone: { type: "string", default: "bag-v1-64" },
      "out-prefix": { type: "string" },
    },
  });
  const templates = (values.templates as string[] | undefined) ?? [];
  const paths = extractTextClassifier({
    classNames: required(values, "classes").split(","),
    templates,
    backbone: values.backbone as string,
    outPrefix: required(values, "out-prefix"),
  });
  for (const p of paths) console.log(p);
}

function main(): void {
  const [command, ...rest] = process.argv.slice(2);
  try {
    if (command === "extract-images") runImages(rest);
    else if (command === "extract-text") runText(rest);
    else fail(`usage: extract-images|extract-text ... (got "${command ?? ""}")`);
  } catch (err) {
    fail(err instanceof Error ? err.message : String(err));
  }
}

main();
