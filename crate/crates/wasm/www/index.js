// Expects the wasm-bindgen output (--target web) in ./pkg.
import init, { laplaceCheck, momentCurves, entranceHistogram } from "./pkg/hierarchia_wasm.js";

const num = (id) => Number(document.getElementById(id).value);
const out = (id, text) => { document.getElementById(id).textContent = text; };
let seed = 1;

function guarded(id, f) {
  return () => {
    try { f(); } catch (e) { out(id, `error: ${e}`); }
  };
}

function plot(canvasId, series, xs) {
  const cv = document.getElementById(canvasId);
  const g = cv.getContext("2d");
  g.clearRect(0, 0, cv.width, cv.height);
  const all = series.flatMap((s) => s.y);
  const ymax = Math.max(...all) * 1.05 || 1;
  const xmax = xs[xs.length - 1] || 1;
  const px = (x) => 40 + (x / xmax) * (cv.width - 50);
  const py = (y) => cv.height - 20 - (y / ymax) * (cv.height - 30);
  g.strokeStyle = "#999";
  g.strokeRect(40, 10, cv.width - 50, cv.height - 30);
  g.fillStyle = "#333";
  g.fillText(ymax.toPrecision(3), 2, 14);
  g.fillText(xmax.toPrecision(3), cv.width - 40, cv.height - 4);
  for (const s of series) {
    g.strokeStyle = s.color;
    g.beginPath();
    s.y.forEach((y, i) => (i ? g.lineTo(px(xs[i]), py(y)) : g.moveTo(px(xs[i]), py(y))));
    g.stroke();
  }
}

function feller() {
  const r = JSON.parse(laplaceCheck(num("f-x0"), num("f-t"), num("f-c"), num("f-l"), num("f-n"), seed++));
  const z = (r.estimate - r.exact) / r.std_err;
  out("f-out",
    `E exp(-lambda X_t): exact ${r.exact.toFixed(6)}, sampled ${r.estimate.toFixed(6)} ± ${r.std_err.toExponential(2)} (z ${z.toFixed(2)})\n` +
    `P(X_t > 0):        exact ${r.survival_exact.toFixed(6)}, sampled ${r.survival_estimate.toFixed(6)}`);
}

function moments() {
  const m = JSON.parse(momentCurves(num("m-c"), num("m-a"), num("m-e"), num("m-t"), 400));
  plot("m-plot", [
    { y: m.m11, color: "#1f77b4" },
    { y: m.m21, color: "#2ca02c" },
    { y: m.m12, color: "#d62728" },
  ], m.t);
  out("m-out", `blue E zeta, green E<eta,x^2>, red E zeta^2; stationary E zeta^2 = ${m.limit_m12.toFixed(6)}`);
}

function cascade() {
  const h = JSON.parse(entranceHistogram(num("h-th"), num("h-c"), num("h-b"), num("h-l"), num("h-n"), 60, seed++));
  plot("h-plot", [{ y: h.bins.map((b) => b[1]), color: "#9467bd" }], h.bins.map((b) => b[0]));
  out("h-out", `mean ${h.mean.toFixed(4)}, variance ${h.variance.toFixed(4)} (exact ${h.exact_variance.toFixed(4)})`);
}

await init();
document.getElementById("f-run").onclick = guarded("f-out", feller);
document.getElementById("m-run").onclick = guarded("m-out", moments);
document.getElementById("h-run").onclick = guarded("h-out", cascade);
moments();
