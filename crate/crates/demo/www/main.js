import init, { stable_histogram, free_mollifier, rates_json } from "./pkg/kinetic_chaos_demo.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function drawHistogram() {
  const bins = 160, half = 8;
  const canvas = $("h-canvas"), ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  let h;
  try {
    h = stable_histogram(num("h-alpha"), num("h-t"), num("h-n"), BigInt(num("h-seed")), bins, half);
  } catch (e) {
    $("h-info").innerHTML = `<span class="err">${e}</span>`;
    return;
  }
  const dens = h.slice(0, bins);
  const peak = Math.max(...dens);
  const w = canvas.width / bins;
  ctx.fillStyle = "#1f5fa8";
  dens.forEach((d, i) => {
    const hgt = (d / peak) * (canvas.height - 10);
    ctx.fillRect(i * w, canvas.height - hgt, w - 1, hgt);
  });
  const tails = (100 * (h[bins] + h[bins + 1])).toFixed(2);
  $("h-info").textContent = `peak density ${peak.toFixed(4)}, ${tails}% of samples outside [-${half}, ${half}]`;
}

function drawMollifier() {
  const nx = 200, nv = 200, lx = 1, lv = 1;
  const t = num("m-t");
  $("m-tval").textContent = t.toFixed(2);
  const canvas = $("m-canvas"), ctx = canvas.getContext("2d");
  let f;
  try {
    f = free_mollifier(num("m-alpha"), num("m-zeta"), num("m-n"), t, nx, nv, lx, lv);
  } catch (e) {
    ctx.clearRect(0, 0, canvas.width, canvas.height);
    ctx.fillStyle = "#b00";
    ctx.fillText(String(e), 10, 20);
    return;
  }
  const peak = Math.max(...f) || 1;
  const img = ctx.createImageData(nx, nv);
  for (let ix = 0; ix < nx; ix++) {
    for (let iv = 0; iv < nv; iv++) {
      const s = 1 - f[ix * nv + iv] / peak;
      const p = 4 * ((nv - 1 - iv) * nx + ix);
      img.data[p] = 255 * s;
      img.data[p + 1] = 255 * s;
      img.data[p + 2] = 255;
      img.data[p + 3] = 255;
    }
  }
  const tmp = new OffscreenCanvas(nx, nv);
  tmp.getContext("2d").putImageData(img, 0, 0);
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(tmp, 0, 0, canvas.width, canvas.height);
}

function deriveRates() {
  try {
    const json = JSON.parse(rates_json($("r-config").value));
    $("r-out").textContent = JSON.stringify(json, null, 2);
    $("r-out").className = "";
  } catch (e) {
    $("r-out").textContent = String(e);
    $("r-out").className = "err";
  }
}

await init();
$("h-run").addEventListener("click", drawHistogram);
for (const id of ["m-alpha", "m-zeta", "m-n", "m-t"]) $(id).addEventListener("input", drawMollifier);
$("r-run").addEventListener("click", deriveRates);
drawHistogram();
drawMollifier();
deriveRates();
