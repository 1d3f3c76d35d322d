/** Tiny loss-curve sparkline on a 2D canvas, log-scaled when it helps. */

export function drawSparkline(
  canvas: HTMLCanvasElement,
  values: number[],
): void {
  const ctx = canvas.getContext("2d");
  if (!ctx || values.length === 0) return;
  const w = canvas.width;
  const h = canvas.height;
  ctx.clearRect(0, 0, w, h);

  const positive = values.every((v) => v > 0);
  const ys = positive ? values.map(Math.log10) : values.slice();
  let lo = Math.min(...ys);
  let hi = Math.max(...ys);
  if (hi - lo < 1e-12) {
    lo -= 0.5;
    hi += 0.5;
  }
  ctx.strokeStyle = "#2a7ae2";
  ctx.lineWidth = 1.5;
  ctx.beginPath();
  ys.forEach((v, i) => {
    const x = (i / Math.max(ys.length - 1, 1)) * (w - 4) + 2;
    const y = h - 3 - ((v - lo) / (hi - lo)) * (h - 6);
    if (i === 0) ctx.moveTo(x, y);
    else ctx.lineTo(x, y);
  });
  ctx.stroke();
}
