import init, { kernel, degrade_preview, curricular_curve } from "./pkg/reid_degrade_web.js";

const $ = (id) => document.getElementById(id);

function report(el, f) {
  try {
    f();
    el.classList.remove("err");
  } catch (e) {
    el.textContent = String(e.message ?? e);
    el.classList.add("err");
  }
}

function drawKernel() {
  report($("k-info"), () => {
    const k = kernel($("k-family").value, BigInt($("k-seed").value || 0), $("k-spec").value);
    const side = k.side, w = k.weights;
    const max = Math.max(...w);
    const canvas = $("k-canvas"), ctx = canvas.getContext("2d");
    const cell = canvas.width / side;
    ctx.clearRect(0, 0, canvas.width, canvas.height);
    for (let y = 0; y < side; y++) {
      for (let x = 0; x < side; x++) {
        const v = Math.round(255 * w[y * side + x] / max);
        ctx.fillStyle = `rgb(${v},${Math.round(v * 0.6)},${255 - v})`;
        ctx.fillRect(x * cell, y * cell, Math.ceil(cell), Math.ceil(cell));
      }
    }
    const sum = w.reduce((a, b) => a + b, 0);
    $("k-info").textContent = `${k.label}\nside ${side}, sum ${sum.toFixed(12)}, peak ${max.toExponential(4)}`;
  });
}

function paint(canvas, side, rgba) {
  const img = new ImageData(new Uint8ClampedArray(rgba), side, side);
  canvas.getContext("2d").putImageData(img, 0, 0);
}

function drawPreview() {
  report($("d-info"), () => {
    const t0 = performance.now();
    const p = degrade_preview($("d-pipeline").value, BigInt($("d-id").value || 0), BigInt($("d-seed").value || 0));
    paint($("d-clean"), p.side, p.clean);
    paint($("d-out"), p.side, p.degraded);
    const trace = JSON.parse(p.trace);
    const ops = trace.ops.map((o) => JSON.stringify(o)).join("\n");
    $("d-info").textContent =
      `PSNR ${p.psnr.toFixed(2)} dB, sub-seed ${trace.sub_seed}, ${(performance.now() - t0).toFixed(0)} ms\n${ops}`;
  });
}

function drawCurve() {
  const cos = parseFloat($("c-cos").value), m = parseFloat($("c-m").value), t = parseFloat($("c-t").value);
  const c = curricular_curve(cos, m, t, 201);
  const xs = c.xs, ys = c.ys;
  const canvas = $("c-canvas"), ctx = canvas.getContext("2d");
  const W = canvas.width, H = canvas.height, pad = 30;
  const lo = Math.min(-1, ...ys), hi = Math.max(1, ...ys);
  const px = (x) => pad + (x + 1) / 2 * (W - 2 * pad);
  const py = (y) => H - pad - (y - lo) / (hi - lo) * (H - 2 * pad);
  ctx.clearRect(0, 0, W, H);
  ctx.strokeStyle = "#bbb";
  ctx.beginPath();
  ctx.moveTo(px(-1), py(-1)); ctx.lineTo(px(1), py(1));
  ctx.moveTo(px(-1), py(0)); ctx.lineTo(px(1), py(0));
  ctx.moveTo(px(0), py(lo)); ctx.lineTo(px(0), py(hi));
  ctx.stroke();
  ctx.strokeStyle = "#c60";
  ctx.setLineDash([4, 4]);
  ctx.beginPath();
  ctx.moveTo(px(c.target), py(lo)); ctx.lineTo(px(c.target), py(hi));
  ctx.stroke();
  ctx.setLineDash([]);
  ctx.strokeStyle = "#1a5fb4";
  ctx.lineWidth = 2;
  ctx.beginPath();
  xs.forEach((x, i) => (i ? ctx.lineTo(px(x), py(ys[i])) : ctx.moveTo(px(x), py(ys[i]))));
  ctx.stroke();
  ctx.lineWidth = 1;
  ctx.fillStyle = "#222";
  ctx.fillText("cos θj", W - pad - 30, H - 8);
  ctx.fillText("N(cos θj)", 4, 12);
  $("c-info").textContent =
    `T(cos θy) = ${c.target.toFixed(4)}; negatives with cos θj > T are hard and get cos θj (t + cos θj)`;
}

await init();
$("k-go").addEventListener("click", drawKernel);
$("d-go").addEventListener("click", drawPreview);
for (const id of ["c-cos", "c-m", "c-t"]) $(id).addEventListener("input", drawCurve);
drawKernel();
drawPreview();
drawCurve();
