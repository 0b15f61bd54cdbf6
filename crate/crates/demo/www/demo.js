import init, { sample_path, meanfield_curve, criteria_scan } from "./pkg/jumpflow_demo.js";

function values(box) {
  const out = {};
  for (const el of box.querySelectorAll("input")) {
    out[el.name] = el.type === "number" ? Number(el.value) : el.value;
  }
  return out;
}

function plot(canvas, xs, series) {
  const ctx = canvas.getContext("2d");
  const { width: w, height: h } = canvas;
  ctx.clearRect(0, 0, w, h);
  const ys = series.flatMap((s) => s.ys).filter(Number.isFinite);
  const [x0, x1] = [Math.min(...xs), Math.max(...xs)];
  let [y0, y1] = [Math.min(0, ...ys), Math.max(...ys)];
  if (y1 === y0) y1 = y0 + 1;
  const px = (x) => 40 + ((x - x0) / (x1 - x0 || 1)) * (w - 50);
  const py = (y) => h - 20 - ((y - y0) / (y1 - y0)) * (h - 30);
  ctx.strokeStyle = "#999";
  ctx.strokeRect(40, 10, w - 50, h - 30);
  ctx.fillStyle = "#333";
  ctx.fillText(y1.toPrecision(3), 2, 14);
  ctx.fillText(y0.toPrecision(3), 2, h - 20);
  ctx.fillText(x1.toPrecision(3), w - 40, h - 5);
  for (const s of series) {
    ctx.strokeStyle = s.color;
    ctx.beginPath();
    s.ys.forEach((y, i) => (i ? ctx.lineTo(px(xs[i]), py(y)) : ctx.moveTo(px(xs[i]), py(y))));
    ctx.stroke();
  }
}

function wire(id, action) {
  const box = document.getElementById(id);
  const status = box.querySelector(".status");
  box.querySelector("button").addEventListener("click", () => {
    status.className = "status";
    status.textContent = "running…";
    setTimeout(() => {
      try {
        action(values(box), box, status);
      } catch (e) {
        status.className = "status err";
        status.textContent = String(e);
      }
    });
  });
}

await init();

wire("path", (v, box, status) => {
  const r = JSON.parse(sample_path(v.model, v.x0, v.dt, v.t_end, BigInt(v.seed)));
  status.textContent = `${r.status} at t = ${r.end_time}`;
  plot(box.querySelector("canvas"), r.times, [{ ys: r.states, color: "#1f77b4" }]);
});

wire("meanfield", (v, box, status) => {
  const r = JSON.parse(
    meanfield_curve(v.z0, v.a, v.b, v.a_tilde, v.dt, v.t_end, v.n_paths, BigInt(v.seed)),
  );
  status.textContent = `blue: empirical mean, orange: closed form; ${r.censored} paths censored`;
  plot(box.querySelector("canvas"), r.times, [
    { ys: r.mean, color: "#1f77b4" },
    { ys: r.h, color: "#ff7f0e" },
  ]);
});

wire("criteria", (v, box, status) => {
  const rows = JSON.parse(criteria_scan(v.model, v.t, v.c0, v.c1));
  status.textContent = rows
    .map((r) => `${r.criterion}: ${r.verdict} (extremum ${r.extremal_value.toPrecision(4)} at s = ${r.extremal_location[0].toPrecision(3)}, x = ${r.extremal_location[1].toPrecision(3)})`)
    .join("\n");
});
