import init, { shape_table, decode_boxes, score_boxes } from './pkg/swiftface_demo.js';

const $ = (id) => document.getElementById(id);

function call(fn, arg) {
  const out = JSON.parse(fn(typeof arg === 'string' ? arg : JSON.stringify(arg)));
  if (out.error) throw new Error(out.error);
  return out;
}

function strokeBox(ctx, b, color, dash = []) {
  ctx.setLineDash(dash);
  ctx.strokeStyle = color;
  ctx.lineWidth = 2;
  ctx.strokeRect(b.x, b.y, b.w, b.h);
  ctx.setLineDash([]);
}

// Layer shapes

function inferShapes() {
  try {
    $('shapes').className = '';
    $('shapes').textContent = call(shape_table, $('config').value).text.join('\n');
  } catch (e) {
    $('shapes').className = 'error';
    $('shapes').textContent = e.message;
  }
}

// Decoding and suppression

const faces = [];
const logit = (p) => Math.log(p / (1 - p));

function plantFace(px, py) {
  const obj = parseFloat($('obj').value);
  for (const [head, stride, anchor, boost] of [[0, 32, 0, 0], [1, 16, 2, -1]]) {
    const col = Math.min(Math.floor(px / stride), 512 / stride - 1);
    const row = Math.min(Math.floor(py / stride), 512 / stride - 1);
    const fx = Math.min(Math.max(px / stride - col, 0.02), 0.98);
    const fy = Math.min(Math.max(py / stride - row, 0.02), 0.98);
    faces.push({ head, row, col, anchor, tx: logit(fx), ty: logit(fy), objectness: obj + boost });
  }
}

function redrawDecode() {
  const conf = parseFloat($('conf').value);
  const nms = parseFloat($('nms').value);
  $('confv').textContent = conf.toFixed(2);
  $('nmsv').textContent = nms.toFixed(2);
  const ctx = $('decode').getContext('2d');
  ctx.clearRect(0, 0, 512, 512);
  ctx.strokeStyle = '#333';
  ctx.lineWidth = 1;
  for (let i = 32; i < 512; i += 32) {
    ctx.beginPath(); ctx.moveTo(i, 0); ctx.lineTo(i, 512); ctx.moveTo(0, i); ctx.lineTo(512, i); ctx.stroke();
  }
  try {
    const out = call(decode_boxes, { faces, conf, nms });
    for (const b of out.boxes.filter((b) => !b.kept)) strokeBox(ctx, b, '#888', [4, 3]);
    for (const b of out.boxes.filter((b) => b.kept)) strokeBox(ctx, b, '#f33');
    $('decode-summary').textContent = `${out.candidates} candidates, ${out.kept} kept`;
  } catch (e) {
    $('decode-summary').textContent = e.message;
  }
}

// IoU and AP

const truths = [];
const detections = [];
let drag = null;

function canvasPoint(ev) {
  const r = ev.target.getBoundingClientRect();
  return [ev.clientX - r.left, ev.clientY - r.top];
}

function redrawScore(preview) {
  const ctx = $('score').getContext('2d');
  ctx.clearRect(0, 0, 512, 512);
  truths.forEach((b) => strokeBox(ctx, b, '#3c3'));
  detections.forEach((b) => strokeBox(ctx, b, '#fc3'));
  if (preview) strokeBox(ctx, preview, '#fff', [3, 3]);

  if (!detections.length && !truths.length) {
    $('score-out').innerHTML = '';
    return;
  }
  const out = call(score_boxes, { truths, detections });
  const rows = out.ranked.map((d, i) =>
    `<tr><td>${i + 1}</td><td>${d.confidence.toFixed(2)}</td><td>${out.best_iou[i].toFixed(3)}</td><td>${out.matched_at_50[i] ? 'TP' : 'FP'}</td></tr>`);
  const aps = Object.entries(out.report)
    .filter(([k]) => k.startsWith('ap'))
    .map(([k, v]) => `<tr><td>${k}</td><td>${v.toFixed(4)}</td></tr>`);
  $('score-out').innerHTML =
    `<table><tr><th>rank</th><th>conf</th><th>best IoU</th><th>@0.50</th></tr>${rows.join('')}</table>
     <table><tr><th>threshold</th><th>AP</th></tr>${aps.join('')}
     <tr><th>mAP .50:.95</th><th>${out.report.map_5095.toFixed(4)}</th></tr></table>`;
}

function dragBox(ev) {
  const [x, y] = canvasPoint(ev);
  return {
    x: Math.min(x, drag[0]), y: Math.min(y, drag[1]),
    w: Math.abs(x - drag[0]), h: Math.abs(y - drag[1]),
  };
}

async function main() {
  await init();
  $('infer').onclick = inferShapes;
  inferShapes();

  $('decode').onclick = (ev) => { plantFace(...canvasPoint(ev)); redrawDecode(); };
  $('conf').oninput = $('nms').oninput = redrawDecode;
  $('clear-faces').onclick = () => { faces.length = 0; redrawDecode(); };
  redrawDecode();

  const score = $('score');
  score.onmousedown = (ev) => { drag = canvasPoint(ev); };
  score.onmousemove = (ev) => { if (drag) redrawScore(dragBox(ev)); };
  score.onmouseup = (ev) => {
    if (!drag) return;
    const b = dragBox(ev);
    drag = null;
    if (b.w >= 2 && b.h >= 2) {
      const kind = document.querySelector('input[name=kind]:checked').value;
      if (kind === 'truth') truths.push(b);
      else detections.push({ ...b, confidence: parseFloat($('det-conf').value) });
    }
    redrawScore();
  };
  $('clear-boxes').onclick = () => { truths.length = 0; detections.length = 0; redrawScore(); };
}

main();
