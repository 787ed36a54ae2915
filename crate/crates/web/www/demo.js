import init, { bandpass, kappa_report, embed_points } from "./pkg/microsleep_web.js";

const RATE = 200;
const $ = (id) => document.getElementById(id);

function drawTraces(canvas, traces) {
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  let lim = 1;
  for (const t of traces) for (const v of t.data) lim = Math.max(lim, Math.abs(v));
  const mid = canvas.height / 2;
  for (const t of traces) {
    ctx.strokeStyle = t.color;
    ctx.beginPath();
    t.data.forEach((v, i) => {
      const x = (i / (t.data.length - 1)) * canvas.width;
      const y = mid - (v / lim) * (mid - 4);
      i ? ctx.lineTo(x, y) : ctx.moveTo(x, y);
    });
    ctx.stroke();
  }
}

function runBandpass() {
  const a = +$("bp-alpha").value, d = +$("bp-drift").value, h = +$("bp-hum").value, dc = +$("bp-dc").value;
  const n = 10 * RATE;
  const raw = new Float64Array(n);
  for (let i = 0; i < n; i++) {
    const t = i / RATE;
    raw[i] = a * Math.sin(2 * Math.PI * 10 * t) + d * Math.sin(2 * Math.PI * 0.2 * t) + h * Math.sin(2 * Math.PI * 60 * t) + dc;
  }
  const out = bandpass(raw, RATE);
  const shown = 2 * RATE;
  drawTraces($("bp-canvas"), [
    { data: raw.slice(0, shown), color: "#bbb" },
    { data: out.slice(0, shown), color: "#1565c0" },
  ]);
}

function runKappa() {
  try {
    $("k-out").textContent = kappa_report($("k-pred").value, $("k-ref").value);
    $("k-out").className = "";
  } catch (e) {
    $("k-out").textContent = String(e.message || e);
    $("k-out").className = "err";
  }
}

// Small seeded generator so a seed reproduces the same clusters.
function mulberry32(a) {
  return () => {
    a |= 0; a = (a + 0x6d2b79f5) | 0;
    let t = Math.imul(a ^ (a >>> 15), 1 | a);
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t;
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

const COLORS = ["#1565c0", "#c62828", "#2e7d32", "#ef6c00", "#6a1b9a", "#00838f"];

function runTsne() {
  const k = +$("ts-k").value, per = +$("ts-n").value, seed = +$("ts-seed").value, dim = 16;
  const rand = mulberry32(seed);
  const gauss = () => Math.sqrt(-2 * Math.log(1 - rand())) * Math.cos(2 * Math.PI * rand());
  const pts = [], cls = [];
  for (let c = 0; c < k; c++) {
    const center = Array.from({ length: dim }, () => 8 * gauss());
    for (let i = 0; i < per; i++) {
      for (let j = 0; j < dim; j++) pts.push(center[j] + gauss());
      cls.push(c);
    }
  }
  let out;
  try {
    out = embed_points(new Float64Array(pts), dim, +$("ts-perp").value, 600, seed);
  } catch (e) {
    $("ts-info").textContent = String(e.message || e);
    return;
  }
  const n = cls.length;
  const xs = [], ys = [];
  for (let i = 0; i < n; i++) { xs.push(out[2 * i]); ys.push(out[2 * i + 1]); }
  const canvas = $("ts-canvas"), ctx = canvas.getContext("2d");
  const lo = [Math.min(...xs), Math.min(...ys)], hi = [Math.max(...xs), Math.max(...ys)];
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  for (let i = 0; i < n; i++) {
    const x = 10 + ((xs[i] - lo[0]) / (hi[0] - lo[0] || 1)) * (canvas.width - 20);
    const y = 10 + ((ys[i] - lo[1]) / (hi[1] - lo[1] || 1)) * (canvas.height - 20);
    ctx.fillStyle = COLORS[cls[i] % COLORS.length];
    ctx.beginPath();
    ctx.arc(x, y, 3, 0, 2 * Math.PI);
    ctx.fill();
  }
  $("ts-info").textContent = `KL ${out[2 * n].toFixed(3)} -> ${out[2 * n + 1].toFixed(3)}`;
}

await init();
$("status").textContent = "";
for (const id of ["bp-alpha", "bp-drift", "bp-hum", "bp-dc"]) $(id).addEventListener("input", runBandpass);
$("k-run").addEventListener("click", runKappa);
$("ts-run").addEventListener("click", runTsne);
runBandpass();
runKappa();
