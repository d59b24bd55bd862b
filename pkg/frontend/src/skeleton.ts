// Orthographic projections of the bridge-sent link skeleton. The console
// deliberately contains no kinematics: it plots exactly the world points
// it was given, top view (x right, y up the screen) and side view
// (x right, z up the screen).

export interface Projected {
  top: Array<[number, number]>;
  side: Array<[number, number]>;
}

// Grow-only view extent in meters; a ratchet instead of per-frame
// autoscale so the drawing does not breathe while the arm moves.
export function fitExtent(points: number[][], previous: number): number {
  let m = previous;
  for (const p of points) {
    for (const c of p) {
      const a = Math.abs(c);
      if (a > m) m = a;
    }
  }
  return m;
}

export function project(points: number[][], width: number, height: number,
                        extentM: number): Projected {
  const cx = width / 2;
  const cy = height / 2;
  const scale = (Math.min(width, height) / 2 / extentM) * 0.9;
  const top: Array<[number, number]> = [];
  const side: Array<[number, number]> = [];
  for (const [x, y, z] of points as Array<[number, number, number]>) {
    top.push([cx + x * scale, cy - y * scale]);
    side.push([cx + x * scale, cy - z * scale]);
  }
  return { top, side };
}

export function drawView(ctx: CanvasRenderingContext2D,
                         pts: Array<[number, number]>, color: string): void {
  if (pts.length === 0) return;
  ctx.strokeStyle = color;
  ctx.lineWidth = 3;
  ctx.lineJoin = "round";
  ctx.beginPath();
  ctx.moveTo(pts[0][0], pts[0][1]);
  for (let i = 1; i < pts.length; i++) ctx.lineTo(pts[i][0], pts[i][1]);
  ctx.stroke();
  ctx.fillStyle = color;
  for (const [x, y] of pts) {
    ctx.beginPath();
    ctx.arc(x, y, 4, 0, 2 * Math.PI);
    ctx.fill();
  }
}
