import init, { Mixer, shellAverage, checkSchedule } from "./pkg/shelldiss_wasm.js";

await init();

const $ = (id) => document.getElementById(id);
const canvas = $("field");
const ctx = canvas.getContext("2d");
let mixer = null;
let running = false;

function reset() {
  running = false;
  $("run").textContent = "run";
  try {
    mixer = new Mixer(+$("cutoff").value, +$("shell").value, +$("nu").value, +$("dt").value, BigInt($("seed").value));
  } catch (e) {
    $("energies").textContent = String(e);
    mixer = null;
    return;
  }
  draw();
}

function draw() {
  const n = mixer.size();
  const v = mixer.values();
  let m = 1e-300;
  for (const x of v) m = Math.max(m, Math.abs(x));
  canvas.width = n;
  canvas.height = n;
  const img = ctx.createImageData(n, n);
  for (let i = 0; i < n * n; i++) {
    const s = v[i] / m;
    img.data[4 * i] = s > 0 ? 255 : Math.round(255 * (1 + s));
    img.data[4 * i + 1] = Math.round(255 * (1 - Math.abs(s)));
    img.data[4 * i + 2] = s < 0 ? 255 : Math.round(255 * (1 - s));
    img.data[4 * i + 3] = 255;
  }
  ctx.putImageData(img, 0, 0);
  const [l2, h1, hm1] = mixer.energies();
  $("energies").textContent =
    `t        ${mixer.time().toFixed(4)}\nkappa    ${mixer.kappa()}\n` +
    `|f|^2    ${l2.toExponential(4)}\nH1       ${h1.toExponential(4)}\nH-1      ${hm1.toExponential(4)}`;
}

function frame() {
  if (!running || !mixer) return;
  try {
    mixer.step(4);
  } catch (e) {
    running = false;
    $("energies").textContent = String(e);
    return;
  }
  draw();
  requestAnimationFrame(frame);
}

$("reset").onclick = reset;
$("run").onclick = () => {
  if (!mixer) reset();
  running = !running;
  $("run").textContent = running ? "pause" : "run";
  if (running) requestAnimationFrame(frame);
};

$("avg-go").onclick = () => {
  try {
    const r = JSON.parse(shellAverage(+$("avg-n").value, +$("avg-d").value));
    $("avg-out").textContent =
      `kappa ${r.kappa}\nmean over |l| <= 2   ${r.mean.toFixed(6)}\nlimit                ${r.limit.toFixed(6)}\n` +
      `worst deviation      ${r.max_abs_error.toExponential(3)}`;
  } catch (e) {
    $("avg-out").textContent = String(e);
  }
};

$("sch-go").onclick = () => {
  try {
    const r = JSON.parse(checkSchedule(+$("sch-q").value, +$("sch-nu").value));
    const lines = r.checks.map(
      (c) => `q=${c.q}  ${c.pass ? "ok  " : "FAIL"}  margin ${c.margin.toExponential(3).padStart(11)}  ${c.condition}`
    );
    $("sch-out").textContent = lines.join("\n");
  } catch (e) {
    $("sch-out").textContent = String(e);
  }
};

reset();
