// Chart geometry and SVG rendering as pure functions of API payloads. The
// console never computes statistics; it draws exactly what the server sent.

import type { HeavyHitterResult, RoundRecord } from "./api.js";

export interface Point {
  x: number;
  y: number;
}

export interface LineChartModel {
  width: number;
  height: number;
  points: Point[];
  path: string;
  yMin: number;
  yMax: number;
}

const PAD = 32;

export function lineChartModel(values: number[], width = 520, height = 200): LineChartModel {
  const finite = values.filter((v) => Number.isFinite(v));
  const yMin = finite.length ? Math.min(...finite, 0) : 0;
  const yMax = finite.length ? Math.max(...finite) : 1;
  const span = yMax - yMin || 1;
  const step = values.length > 1 ? (width - 2 * PAD) / (values.length - 1) : 0;
  const points = values.map((v, i) => ({
    x: PAD + i * step,
    y: height - PAD - ((v - yMin) / span) * (height - 2 * PAD),
  }));
  const path = points.map((p, i) => `${i === 0 ? "M" : "L"}${p.x.toFixed(1)},${p.y.toFixed(1)}`).join(" ");
  return { width, height, points, path, yMin, yMax };
}

export function lossChartSvg(records: RoundRecord[]): string {
  const losses = records.map((r) => r.global_loss ?? NaN);
  const model = lineChartModel(losses);
  const circles = model.points
    .map((p, i) =>
      Number.isFinite(losses[i])
        ? `<circle cx="${p.x.toFixed(1)}" cy="${p.y.toFixed(1)}" r="3" data-round="${records[i].round}"><title>round ${records[i].round}: ${losses[i].toExponential(3)}</title></circle>`
        : "",
    )
    .join("");
  const labels =
    records.length > 0
      ? `<text x="${PAD}" y="${model.height - 8}" class="tick">r${records[0].round}</text>` +
        `<text x="${model.width - PAD}" y="${model.height - 8}" class="tick" text-anchor="end">r${records[records.length - 1].round}</text>` +
        `<text x="4" y="${PAD}" class="tick">${model.yMax.toExponential(1)}</text>` +
        `<text x="4" y="${model.height - PAD}" class="tick">${model.yMin.toExponential(1)}</text>`
      : `<text x="${model.width / 2}" y="${model.height / 2}" text-anchor="middle">no rounds yet</text>`;
  return (
    `<svg viewBox="0 0 ${model.width} ${model.height}" class="chart" role="img" aria-label="round loss">` +
    `<path d="${model.path}" fill="none" stroke-width="1.5"></path>${circles}${labels}</svg>`
  );
}

export interface Bar {
  x: number;
  y: number;
  w: number;
  h: number;
  label: string;
  value: number;
}

export function barChartModel(
  entries: { label: string; value: number }[],
  width = 520,
  height = 180,
): Bar[] {
  if (entries.length === 0) return [];
  const values = entries.map((e) => e.value);
  const top = Math.max(...values, 0);
  const bottom = Math.min(...values, 0);
  const span = top - bottom || 1;
  const innerH = height - 2 * PAD;
  const slot = (width - 2 * PAD) / entries.length;
  const zeroY = PAD + (top / span) * innerH;
  return entries.map((e, i) => {
    const scaled = (Math.abs(e.value) / span) * innerH;
    return {
      x: PAD + i * slot + slot * 0.15,
      y: e.value >= 0 ? zeroY - scaled : zeroY,
      w: slot * 0.7,
      h: scaled,
      label: e.label,
      value: e.value,
    };
  });
}

export function heavyHitterChartSvg(result: HeavyHitterResult, width = 520): string {
  const sections = result.per_cluster.map((cluster, index) => {
    const bars = barChartModel(
      cluster.top.map((t) => ({ label: `bucket ${t.bucket}`, value: t.estimate })),
      width,
      150,
    );
    const rects = bars
      .map(
        (b) =>
          `<rect x="${b.x.toFixed(1)}" y="${b.y.toFixed(1)}" width="${b.w.toFixed(1)}" height="${Math.max(b.h, 0.5).toFixed(1)}" data-label="${b.label}"><title>${b.label}: ${b.value.toFixed(1)}</title></rect>`,
      )
      .join("");
    const labels = bars
      .map(
        (b) =>
          `<text x="${(b.x + b.w / 2).toFixed(1)}" y="142" text-anchor="middle" class="tick">${b.label} (${b.value.toFixed(0)})</text>`,
      )
      .join("");
    return (
      `<figure class="cluster-chart" data-cluster="${cluster.cluster}">` +
      `<figcaption>${escapeHtml(cluster.cluster)}</figcaption>` +
      `<svg viewBox="0 0 ${width} 150" class="chart" role="img" aria-label="heavy hitters ${index}">${rects}${labels}</svg>` +
      `</figure>`
    );
  });
  return sections.join("");
}

export function escapeHtml(text: string): string {
  return text
    .replaceAll("&", "&amp;")
    .replaceAll("<", "&lt;")
    .replaceAll(">", "&gt;")
    .replaceAll('"', "&quot;");
}
