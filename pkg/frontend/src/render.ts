/**
 * WebGL2 point-sprite renderer with orbit controls.
 *
 * One interleaved static vertex buffer holds positions; colors live in a
 * separate dynamic buffer so a recolor uploads 3 bytes per point and
 * nothing else. Enough for million-point scenes on integrated GPUs.
 */

const VERT = `#version 300 es
layout(location=0) in vec3 aPos;
layout(location=1) in vec3 aColor;
uniform mat4 uMvp;
uniform float uPointSize;
out vec3 vColor;
void main() {
  gl_Position = uMvp * vec4(aPos, 1.0);
  gl_PointSize = uPointSize;
  vColor = aColor;
}`;

const FRAG = `#version 300 es
precision mediump float;
in vec3 vColor;
out vec4 outColor;
void main() {
  outColor = vec4(vColor, 1.0);
}`;

function compile(gl: WebGL2RenderingContext, type: number, src: string): WebGLShader {
  const shader = gl.createShader(type)!;
  gl.shaderSource(shader, src);
  gl.compileShader(shader);
  if (!gl.getShaderParameter(shader, gl.COMPILE_STATUS)) {
    throw new Error(`shader compile failed: ${gl.getShaderInfoLog(shader)}`);
  }
  return shader;
}

type Mat4 = Float32Array;

function mat4Identity(): Mat4 {
  const m = new Float32Array(16);
  m[0] = m[5] = m[10] = m[15] = 1;
  return m;
}

function mat4Multiply(a: Mat4, b: Mat4): Mat4 {
  const out = new Float32Array(16);
  for (let col = 0; col < 4; col++) {
    for (let row = 0; row < 4; row++) {
      let sum = 0;
      for (let k = 0; k < 4; k++) sum += a[k * 4 + row] * b[col * 4 + k];
      out[col * 4 + row] = sum;
    }
  }
  return out;
}

function mat4Perspective(fovY: number, aspect: number, near: number, far: number): Mat4 {
  const f = 1 / Math.tan(fovY / 2);
  const m = new Float32Array(16);
  m[0] = f / aspect;
  m[5] = f;
  m[10] = (far + near) / (near - far);
  m[11] = -1;
  m[14] = (2 * far * near) / (near - far);
  return m;
}

function mat4LookAt(eye: number[], target: number[], up: number[]): Mat4 {
  const fwd = normalize3(sub3(target, eye));
  const right = normalize3(cross3(fwd, up));
  const u = cross3(right, fwd);
  const m = mat4Identity();
  m[0] = right[0];
  m[4] = right[1];
  m[8] = right[2];
  m[1] = u[0];
  m[5] = u[1];
  m[9] = u[2];
  m[2] = -fwd[0];
  m[6] = -fwd[1];
  m[10] = -fwd[2];
  m[12] = -dot3(right, eye);
  m[13] = -dot3(u, eye);
  m[14] = dot3(fwd, eye);
  return m;
}

const sub3 = (a: number[], b: number[]) => [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
const dot3 = (a: number[], b: number[]) => a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
const cross3 = (a: number[], b: number[]) => [
  a[1] * b[2] - a[2] * b[1],
  a[2] * b[0] - a[0] * b[2],
  a[0] * b[1] - a[1] * b[0],
];
function normalize3(v: number[]): number[] {
  const n = Math.hypot(v[0], v[1], v[2]) || 1;
  return [v[0] / n, v[1] / n, v[2] / n];
}

export class OrbitCamera {
  azimuth = 0.8;
  elevation = 0.5;
  distance = 3.5;
  target: number[] = [0, 0, 0.2];

  eye(): number[] {
    const ce = Math.cos(this.elevation);
    return [
      this.target[0] + this.distance * ce * Math.cos(this.azimuth),
      this.target[1] + this.distance * ce * Math.sin(this.azimuth),
      this.target[2] + this.distance * Math.sin(this.elevation),
    ];
  }

  viewProjection(aspect: number): Mat4 {
    const proj = mat4Perspective(Math.PI / 3, aspect, 0.05, 100);
    const view = mat4LookAt(this.eye(), this.target, [0, 0, 1]);
    return mat4Multiply(proj, view);
  }
}

export class PointRenderer {
  private gl: WebGL2RenderingContext;
  private program: WebGLProgram;
  private vao: WebGLVertexArrayObject;
  private colorBuffer: WebGLBuffer;
  private count = 0;
  readonly camera = new OrbitCamera();
  pointSize = 2.0;

  constructor(private canvas: HTMLCanvasElement) {
    const gl = canvas.getContext("webgl2");
    if (!gl) throw new Error("WebGL2 is not available");
    this.gl = gl;
    const program = gl.createProgram()!;
    gl.attachShader(program, compile(gl, gl.VERTEX_SHADER, VERT));
    gl.attachShader(program, compile(gl, gl.FRAGMENT_SHADER, FRAG));
    gl.linkProgram(program);
    if (!gl.getProgramParameter(program, gl.LINK_STATUS)) {
      throw new Error(`program link failed: ${gl.getProgramInfoLog(program)}`);
    }
    this.program = program;
    this.vao = gl.createVertexArray()!;
    this.colorBuffer = gl.createBuffer()!;
    this.attachControls();
  }

  setPoints(positions: Float32Array, colors: Uint8Array): void {
    const gl = this.gl;
    this.count = positions.length / 3;
    gl.bindVertexArray(this.vao);
    const posBuffer = gl.createBuffer()!;
    gl.bindBuffer(gl.ARRAY_BUFFER, posBuffer);
    gl.bufferData(gl.ARRAY_BUFFER, positions, gl.STATIC_DRAW);
    gl.enableVertexAttribArray(0);
    gl.vertexAttribPointer(0, 3, gl.FLOAT, false, 0, 0);
    gl.bindBuffer(gl.ARRAY_BUFFER, this.colorBuffer);
    gl.bufferData(gl.ARRAY_BUFFER, colors, gl.DYNAMIC_DRAW);
    gl.enableVertexAttribArray(1);
    gl.vertexAttribPointer(1, 3, gl.UNSIGNED_BYTE, true, 0, 0);
    gl.bindVertexArray(null);

    // Frame the cloud: center the orbit target on the bounding box.
    let [sx, sy, sz] = [0, 0, 0];
    for (let i = 0; i < this.count; i++) {
      sx += positions[i * 3];
      sy += positions[i * 3 + 1];
      sz += positions[i * 3 + 2];
    }
    this.camera.target = [sx / this.count, sy / this.count, sz / this.count];
    this.draw();
  }

  /** Recoloring rewrites only the color buffer. */
  setColors(colors: Uint8Array): void {
    const gl = this.gl;
    gl.bindBuffer(gl.ARRAY_BUFFER, this.colorBuffer);
    gl.bufferData(gl.ARRAY_BUFFER, colors, gl.DYNAMIC_DRAW);
    this.draw();
  }

  draw(): void {
    const gl = this.gl;
    const w = this.canvas.clientWidth || this.canvas.width;
    const h = this.canvas.clientHeight || this.canvas.height;
    if (this.canvas.width !== w || this.canvas.height !== h) {
      this.canvas.width = w;
      this.canvas.height = h;
    }
    gl.viewport(0, 0, w, h);
    gl.clearColor(0.07, 0.07, 0.1, 1);
    gl.clear(gl.COLOR_BUFFER_BIT | gl.DEPTH_BUFFER_BIT);
    gl.enable(gl.DEPTH_TEST);
    if (!this.count) return;
    gl.useProgram(this.program);
    const mvp = this.camera.viewProjection(w / h);
    gl.uniformMatrix4fv(gl.getUniformLocation(this.program, "uMvp"), false, mvp);
    gl.uniform1f(gl.getUniformLocation(this.program, "uPointSize"), this.pointSize);
    gl.bindVertexArray(this.vao);
    gl.drawArrays(gl.POINTS, 0, this.count);
    gl.bindVertexArray(null);
  }

  private attachControls(): void {
    let dragging = false;
    let lastX = 0;
    let lastY = 0;
    this.canvas.addEventListener("pointerdown", (e) => {
      dragging = true;
      lastX = e.clientX;
      lastY = e.clientY;
      this.canvas.setPointerCapture(e.pointerId);
    });
    this.canvas.addEventListener("pointerup", () => {
      dragging = false;
    });
    this.canvas.addEventListener("pointermove", (e) => {
      if (!dragging) return;
      this.camera.azimuth -= (e.clientX - lastX) * 0.008;
      this.camera.elevation = Math.min(
        1.5,
        Math.max(-1.5, this.camera.elevation + (e.clientY - lastY) * 0.008),
      );
      lastX = e.clientX;
      lastY = e.clientY;
      this.draw();
    });
    this.canvas.addEventListener("wheel", (e) => {
      e.preventDefault();
      this.camera.distance = Math.min(30, Math.max(0.3, this.camera.distance * (1 + e.deltaY * 0.001)));
      this.draw();
    });
  }
}
