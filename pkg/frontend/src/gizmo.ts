// Translation/yaw gizmo math and the wireframe overlay. The overlay gives
// immediate feedback between server previews; it draws bounding boxes only
// and never shades a pixel (rendering stays server-side).

export type Mat4 = number[]; // 16 values, row-major

export function identityPose(): Mat4 {
  return [1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1];
}

export function translation(pose: Mat4): [number, number, number] {
  return [pose[3], pose[7], pose[11]];
}

export function translate(pose: Mat4, dx: number, dy: number, dz: number): Mat4 {
  const out = pose.slice();
  out[3] += dx;
  out[7] += dy;
  out[11] += dz;
  return out;
}

export function rotateYaw(pose: Mat4, yaw: number): Mat4 {
  // pre-multiply a world-z rotation about the placement's own center
  const c = Math.cos(yaw);
  const s = Math.sin(yaw);
  const r = pose.slice();
  for (let col = 0; col < 3; col++) {
    const a = pose[0 + col];
    const b = pose[4 + col];
    r[0 + col] = c * a - s * b;
    r[4 + col] = s * a + c * b;
  }
  return r;
}

export interface CameraIntrinsics {
  pose: Mat4; // world-from-camera
  fx: number;
  fy: number;
  cx: number;
  cy: number;
}

function invertRigid(pose: Mat4): Mat4 {
  // [R t; 0 1]^-1 = [R^T, -R^T t]
  const r = [
    pose[0], pose[4], pose[8],
    pose[1], pose[5], pose[9],
    pose[2], pose[6], pose[10],
  ];
  const t = [pose[3], pose[7], pose[11]];
  const nt = [
    -(r[0] * t[0] + r[1] * t[1] + r[2] * t[2]),
    -(r[3] * t[0] + r[4] * t[1] + r[5] * t[2]),
    -(r[6] * t[0] + r[7] * t[1] + r[8] * t[2]),
  ];
  return [r[0], r[1], r[2], nt[0], r[3], r[4], r[5], nt[1], r[6], r[7], r[8], nt[2], 0, 0, 0, 1];
}

export function projectPoint(
  cam: CameraIntrinsics, p: [number, number, number],
): [number, number] | null {
  const inv = invertRigid(cam.pose);
  const x = inv[0] * p[0] + inv[1] * p[1] + inv[2] * p[2] + inv[3];
  const y = inv[4] * p[0] + inv[5] * p[1] + inv[6] * p[2] + inv[7];
  const z = inv[8] * p[0] + inv[9] * p[1] + inv[10] * p[2] + inv[11];
  if (z <= 1e-9) return null;
  return [cam.fx * (x / z) + cam.cx, cam.fy * (y / z) + cam.cy];
}

export function bboxCorners(
  min: [number, number, number], max: [number, number, number], pose: Mat4,
): [number, number, number][] {
  const corners: [number, number, number][] = [];
  for (const x of [min[0], max[0]]) {
    for (const y of [min[1], max[1]]) {
      for (const z of [min[2], max[2]]) {
        corners.push([
          pose[0] * x + pose[1] * y + pose[2] * z + pose[3],
          pose[4] * x + pose[5] * y + pose[6] * z + pose[7],
          pose[8] * x + pose[9] * y + pose[10] * z + pose[11],
        ]);
      }
    }
  }
  return corners;
}

// corner indexing: bit0 = z, bit1 = y, bit2 = x
export const BOX_EDGES: [number, number][] = [
  [0, 1], [2, 3], [4, 5], [6, 7],
  [0, 2], [1, 3], [4, 6], [5, 7],
  [0, 4], [1, 5], [2, 6], [3, 7],
];

export function drawWireBox(
  ctx: CanvasRenderingContext2D,
  cam: CameraIntrinsics,
  min: [number, number, number],
  max: [number, number, number],
  pose: Mat4,
  style: string,
): void {
  const corners = bboxCorners(min, max, pose);
  const projected = corners.map((c) => projectPoint(cam, c));
  ctx.strokeStyle = style;
  ctx.lineWidth = 1.5;
  ctx.beginPath();
  for (const [a, b] of BOX_EDGES) {
    const pa = projected[a];
    const pb = projected[b];
    if (!pa || !pb) continue;
    ctx.moveTo(pa[0], pa[1]);
    ctx.lineTo(pb[0], pb[1]);
  }
  ctx.stroke();
}

export type GizmoMode = "translate-xy" | "translate-z" | "yaw";

export interface GizmoDrag {
  mode: GizmoMode;
  startPose: Mat4;
  // pixels-to-meters factor at the object's depth, supplied by the caller
  metersPerPixel: number;
}

export function applyDrag(drag: GizmoDrag, dxPixels: number, dyPixels: number): Mat4 {
  const m = drag.metersPerPixel;
  switch (drag.mode) {
    case "translate-xy":
      return translate(drag.startPose, dxPixels * m, dyPixels * m, 0);
    case "translate-z":
      return translate(drag.startPose, 0, 0, -dyPixels * m);
    case "yaw":
      return rotateYaw(drag.startPose, dxPixels * 0.01);
  }
}
