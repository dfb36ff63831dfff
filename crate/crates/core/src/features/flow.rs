//! Two-frame dense optical flow by polynomial expansion (Farnebäck), with a
//! Gaussian-style image pyramid and iterative refinement per level.
//!
//! Each pixel neighbourhood is approximated by `f(x) ≈ xᵀAx + bᵀx + c`
//! through weighted least squares with a Gaussian applicability. For a
//! displacement `d`, the second frame satisfies `b₂ = b₁ − 2Ad`; residual
//! equations are accumulated over a box window and solved per pixel.

use serde::{Deserialize, Serialize};

use crate::corpus::GrayPlane;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowParams {
    pub resize_w: usize,
    pub resize_h: usize,
    /// Side of the box window over which displacement equations are pooled.
    pub window_size: usize,
    /// Pyramid levels including the full-resolution level.
    pub pyramid_levels: usize,
    pub iterations: usize,
    /// Width of the polynomial-expansion neighbourhood.
    pub poly_n: usize,
    pub poly_sigma: f64,
}

const fn preset(
    resize_w: usize,
    resize_h: usize,
    window_size: usize,
    pyramid_levels: usize,
    iterations: usize,
) -> FlowParams {
    FlowParams { resize_w, resize_h, window_size, pyramid_levels, iterations, poly_n: 7, poly_sigma: 1.5 }
}

/// Named flow configurations of the evaluation grid.
pub const FLOW_PRESETS: [(&str, FlowParams); 6] = [
    ("F1", preset(224, 126, 15, 3, 3)),
    ("F2", preset(320, 180, 15, 3, 3)),
    ("F3", preset(320, 180, 9, 3, 3)),
    ("F4", preset(320, 180, 21, 3, 3)),
    ("F5", preset(320, 180, 21, 4, 3)),
    ("F6", preset(320, 180, 21, 3, 5)),
];

impl FlowParams {
    pub fn preset(name: &str) -> Option<FlowParams> {
        FLOW_PRESETS.iter().find(|(n, _)| n.eq_ignore_ascii_case(name)).map(|(_, p)| *p)
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("resize_w", self.resize_w),
            ("resize_h", self.resize_h),
            ("window_size", self.window_size),
            ("pyramid_levels", self.pyramid_levels),
            ("iterations", self.iterations),
            ("poly_n", self.poly_n),
        ];
        for (name, v) in checks {
            if v == 0 {
                return Err(Error::arg(name, "must be positive"));
            }
        }
        if !(self.poly_sigma > 0.0) {
            return Err(Error::arg("poly_sigma", "must be positive"));
        }
        Ok(())
    }

    pub fn describe(&self) -> String {
        format!(
            "farneback({}x{},w{},L{},it{},n{},s{})",
            self.resize_w,
            self.resize_h,
            self.window_size,
            self.pyramid_levels,
            self.iterations,
            self.poly_n,
            self.poly_sigma
        )
    }
}

/// Per-pixel displacement from the first frame to the second, px per pair.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    pub u: Vec<f32>,
    pub v: Vec<f32>,
}

impl FlowField {
    fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, u: vec![0.0; width * height], v: vec![0.0; width * height] }
    }

    pub fn magnitudes(&self) -> impl Iterator<Item = f64> + '_ {
        self.u.iter().zip(&self.v).map(|(&u, &v)| f64::from(u).hypot(f64::from(v)))
    }

    /// Mean displacement vector over all pixels.
    pub fn mean_flow(&self) -> (f64, f64) {
        let n = self.u.len().max(1) as f64;
        (self.u.iter().map(|&x| f64::from(x)).sum::<f64>() / n, self.v.iter().map(|&x| f64::from(x)).sum::<f64>() / n)
    }

    fn resized(&self, width: usize, height: usize) -> Self {
        let sx = width as f32 / self.width as f32;
        let sy = height as f32 / self.height as f32;
        let scale = |data: &[f32], s: f32| {
            GrayPlane::new(self.width, self.height, data.to_vec())
                .resize(width, height)
                .data
                .into_iter()
                .map(|x| x * s)
                .collect()
        };
        Self { width, height, u: scale(&self.u, sx), v: scale(&self.v, sy) }
    }
}

/// Quadratic coefficients per pixel: `[b_x, b_y, A_xx, A_yy, A_xy]`.
#[derive(Debug, Clone)]
pub(crate) struct Expansion {
    width: usize,
    height: usize,
    coef: Vec<[f32; 5]>,
}

#[inline]
fn clamp_index(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

fn poly_expand(img: &GrayPlane, poly_n: usize, sigma: f64) -> Expansion {
    let (w, h) = (img.width, img.height);
    let n = (poly_n / 2).max(1) as isize;
    let g: Vec<f64> = (-n..=n).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = g.iter().sum();
    let g: Vec<f64> = g.into_iter().map(|x| x / total).collect();
    let moment = |p: i32| -> f64 { (-n..=n).zip(&g).map(|(i, &gi)| gi * (i as f64).powi(p)).sum() };
    let (m0, m2, m4) = (moment(0), moment(2), moment(4));

    // Normal equations of the (1, x², y²) block; x, y and xy decouple.
    let block = [[m0 * m0, m0 * m2, m0 * m2], [m0 * m2, m0 * m4, m2 * m2], [m0 * m2, m2 * m2, m0 * m4]];
    let inv = invert3(block);

    // horizontal pass: weighted 0th/1st/2nd moments along x
    let mut rows = vec![[0f64; 3]; w * h];
    for y in 0..h {
        let line = &img.data[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = [0f64; 3];
            for (k, &gk) in g.iter().enumerate() {
                let i = k as isize - n;
                let v = f64::from(line[clamp_index(x as isize + i, w)]);
                let fi = i as f64;
                acc[0] += gk * v;
                acc[1] += gk * fi * v;
                acc[2] += gk * fi * fi * v;
            }
            rows[y * w + x] = acc;
        }
    }

    let mut coef = vec![[0f32; 5]; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut c = [0f64; 6]; // c00 c10 c01 c20 c02 c11
            for (k, &gk) in g.iter().enumerate() {
                let j = k as isize - n;
                let r = rows[clamp_index(y as isize + j, h) * w + x];
                let fj = j as f64;
                c[0] += gk * r[0];
                c[1] += gk * r[1];
                c[2] += gk * fj * r[0];
                c[3] += gk * r[2];
                c[4] += gk * fj * fj * r[0];
                c[5] += gk * fj * r[1];
            }
            let bx = c[1] / (m2 * m0);
            let by = c[2] / (m0 * m2);
            let rxy = c[5] / (m2 * m2);
            let axx = inv[1][0] * c[0] + inv[1][1] * c[3] + inv[1][2] * c[4];
            let ayy = inv[2][0] * c[0] + inv[2][1] * c[3] + inv[2][2] * c[4];
            coef[y * w + x] = [bx as f32, by as f32, axx as f32, ayy as f32, (rxy / 2.0) as f32];
        }
    }
    Expansion { width: w, height: h, coef }
}

fn invert3(m: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            // adjugate transpose
            let r: Vec<usize> = (0..3).filter(|&k| k != j).collect();
            let c: Vec<usize> = (0..3).filter(|&k| k != i).collect();
            let minor = m[r[0]][c[0]] * m[r[1]][c[1]] - m[r[0]][c[1]] * m[r[1]][c[0]];
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            *cell = sign * minor / det;
        }
    }
    out
}

impl Expansion {
    fn sample(&self, fx: f32, fy: f32) -> Option<[f32; 5]> {
        if fx < 0.0 || fy < 0.0 || fx > (self.width - 1) as f32 || fy > (self.height - 1) as f32 {
            return None;
        }
        let x0 = (fx.floor() as usize).min(self.width.saturating_sub(2));
        let y0 = (fy.floor() as usize).min(self.height.saturating_sub(2));
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let (ax, ay) = (fx - x0 as f32, fy - y0 as f32);
        let at = |x: usize, y: usize| &self.coef[y * self.width + x];
        let (c00, c10, c01, c11) = (at(x0, y0), at(x1, y0), at(x0, y1), at(x1, y1));
        let mut out = [0f32; 5];
        for k in 0..5 {
            let top = c00[k] + (c10[k] - c00[k]) * ax;
            let bottom = c01[k] + (c11[k] - c01[k]) * ax;
            out[k] = top + (bottom - top) * ay;
        }
        Some(out)
    }
}

/// Box mean over a `size × size` window with replicated borders, per channel.
fn box_blur(data: &mut [[f32; 5]], w: usize, h: usize, size: usize) {
    let half = (size / 2) as isize;
    let norm = 1.0 / (2 * half + 1) as f64;
    let mut tmp = vec![[0f32; 5]; w * h];
    for y in 0..h {
        let row = &data[y * w..(y + 1) * w];
        let mut acc = [0f64; 5];
        for i in -half..=half {
            let v = row[clamp_index(i, w)];
            for k in 0..5 {
                acc[k] += f64::from(v[k]);
            }
        }
        for x in 0..w {
            for k in 0..5 {
                tmp[y * w + x][k] = (acc[k] * norm) as f32;
            }
            let add = row[clamp_index(x as isize + half + 1, w)];
            let sub = row[clamp_index(x as isize - half, w)];
            for k in 0..5 {
                acc[k] += f64::from(add[k]) - f64::from(sub[k]);
            }
        }
    }
    for x in 0..w {
        let mut acc = [0f64; 5];
        let at = |y: isize| tmp[clamp_index(y, h) * w + x];
        for j in -half..=half {
            let v = at(j);
            for k in 0..5 {
                acc[k] += f64::from(v[k]);
            }
        }
        for y in 0..h {
            for k in 0..5 {
                data[y * w + x][k] = (acc[k] * norm) as f32;
            }
            let add = at(y as isize + half + 1);
            let sub = at(y as isize - half);
            for k in 0..5 {
                acc[k] += f64::from(add[k]) - f64::from(sub[k]);
            }
        }
    }
}

fn refine(e1: &Expansion, e2: &Expansion, flow: &mut FlowField, window_size: usize) {
    let (w, h) = (e1.width, e1.height);
    let mut eq = vec![[0f32; 5]; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let (dx, dy) = (flow.u[i], flow.v[i]);
            let Some(c2) = e2.sample(x as f32 + dx, y as f32 + dy) else {
                continue;
            };
            let c1 = &e1.coef[i];
            let a11 = 0.5 * (c1[2] + c2[2]);
            let a22 = 0.5 * (c1[3] + c2[3]);
            let a12 = 0.5 * (c1[4] + c2[4]);
            let bx = -0.5 * (c2[0] - c1[0]) + a11 * dx + a12 * dy;
            let by = -0.5 * (c2[1] - c1[1]) + a12 * dx + a22 * dy;
            eq[i] = [
                a11 * a11 + a12 * a12,
                a11 * a12 + a12 * a22,
                a12 * a12 + a22 * a22,
                a11 * bx + a12 * by,
                a12 * bx + a22 * by,
            ];
        }
    }
    box_blur(&mut eq, w, h, window_size);
    for (i, m) in eq.iter().enumerate() {
        let [g11, g12, g22, h1, h2] = m.map(f64::from);
        let det = g11 * g22 - g12 * g12 + 1e-3;
        flow.u[i] = ((g22 * h1 - g12 * h2) / det) as f32;
        flow.v[i] = ((g11 * h2 - g12 * h1) / det) as f32;
    }
}

/// Polynomial expansions of one frame at every pyramid level, finest first.
#[derive(Debug, Clone)]
pub(crate) struct ExpansionPyramid {
    levels: Vec<Expansion>,
}

const MIN_LEVEL_SIDE: usize = 16;

impl ExpansionPyramid {
    pub(crate) fn build(frame: &GrayPlane, params: &FlowParams) -> Self {
        let base = frame.resize(params.resize_w, params.resize_h);
        let mut levels = vec![poly_expand(&base, params.poly_n, params.poly_sigma)];
        for l in 1..params.pyramid_levels {
            let scale = 0.5f64.powi(l as i32);
            let lw = (params.resize_w as f64 * scale).round() as usize;
            let lh = (params.resize_h as f64 * scale).round() as usize;
            if lw.min(lh) < MIN_LEVEL_SIDE {
                break;
            }
            levels.push(poly_expand(&base.resize(lw, lh), params.poly_n, params.poly_sigma));
        }
        Self { levels }
    }
}

pub(crate) fn flow_between(a: &ExpansionPyramid, b: &ExpansionPyramid, params: &FlowParams) -> FlowField {
    let mut flow: Option<FlowField> = None;
    for (e1, e2) in a.levels.iter().zip(&b.levels).rev() {
        let mut f = match flow.take() {
            Some(coarse) => coarse.resized(e1.width, e1.height),
            None => FlowField::zeros(e1.width, e1.height),
        };
        for _ in 0..params.iterations {
            refine(e1, e2, &mut f, params.window_size);
        }
        flow = Some(f);
    }
    flow.expect("at least one pyramid level")
}

/// Dense flow from `a` to `b`, both resized to the configured resolution.
pub fn farneback_flow(a: &GrayPlane, b: &GrayPlane, params: &FlowParams) -> Result<FlowField> {
    params.validate()?;
    if (a.width, a.height) != (b.width, b.height) {
        return Err(Error::DimensionMismatch { expected: a.width * a.height, actual: b.width * b.height });
    }
    let pa = ExpansionPyramid::build(a, params);
    let pb = ExpansionPyramid::build(b, params);
    Ok(flow_between(&pa, &pb, params))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::rng::SeededRng;

    /// Sum of random oriented gratings sampled at `(x - dx, y - dy)`.
    pub(crate) fn texture(w: usize, h: usize, dx: f64, dy: f64, seed: u64, offset: f32) -> GrayPlane {
        let mut rng = SeededRng::new(seed);
        let waves: Vec<(f64, f64, f64)> = (0..8)
            .map(|_| {
                let theta = rng.unit_f64() * std::f64::consts::PI;
                let period = 10.0 + 20.0 * rng.unit_f64();
                let k = std::f64::consts::TAU / period;
                (k * theta.cos(), k * theta.sin(), rng.unit_f64() * std::f64::consts::TAU)
            })
            .collect();
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let (px, py) = (x as f64 - dx, y as f64 - dy);
                let s: f64 = waves.iter().map(|(kx, ky, ph)| (kx * px + ky * py + ph).sin()).sum();
                data.push((120.0 + 10.0 * s) as f32 + offset);
            }
        }
        GrayPlane::new(w, h, data)
    }

    #[test]
    fn identical_frames_have_no_flow() {
        let p = FlowParams::preset("F4").unwrap();
        let a = texture(320, 180, 0.0, 0.0, 1, 0.0);
        let f = farneback_flow(&a, &a, &p).unwrap();
        let mean_mag = f.magnitudes().sum::<f64>() / f.u.len() as f64;
        assert!(mean_mag < 0.05, "{mean_mag}");
    }

    #[test]
    fn constant_frames_have_no_flow() {
        let p = FlowParams::preset("F1").unwrap();
        let a = GrayPlane::filled(224, 126, 90.0);
        let b = GrayPlane::filled(224, 126, 91.0);
        let f = farneback_flow(&a, &b, &p).unwrap();
        assert!(f.magnitudes().all(|m| m < 0.05));
    }

    #[test]
    fn recovers_translation() {
        let p = FlowParams::preset("F4").unwrap();
        let a = texture(320, 180, 0.0, 0.0, 7, 0.0);
        let b = texture(320, 180, 3.0, 0.0, 7, 0.0);
        let (u, v) = farneback_flow(&a, &b, &p).unwrap().mean_flow();
        assert!((u - 3.0).abs() < 0.6 && v.abs() < 0.6, "({u}, {v})");
    }

    #[test]
    fn recovers_vertical_and_negative_motion() {
        let p = FlowParams::preset("F2").unwrap();
        let a = texture(320, 180, 0.0, 0.0, 9, 0.0);
        let b = texture(320, 180, -1.0, 2.0, 9, 0.0);
        let (u, v) = farneback_flow(&a, &b, &p).unwrap().mean_flow();
        assert!((u + 1.0).abs() < 0.3 && (v - 2.0).abs() < 0.4, "({u}, {v})");
    }

    #[test]
    fn flow_is_linear_in_shift() {
        let p = FlowParams::preset("F4").unwrap();
        let a = texture(320, 180, 0.0, 0.0, 3, 0.0);
        let one = farneback_flow(&a, &texture(320, 180, 1.0, 0.0, 3, 0.0), &p).unwrap().mean_flow().0;
        let two = farneback_flow(&a, &texture(320, 180, 2.0, 0.0, 3, 0.0), &p).unwrap().mean_flow().0;
        assert!((two / one - 2.0).abs() < 0.5, "{one} {two}");
    }

    #[test]
    fn rejects_mismatched_frames() {
        let p = FlowParams::preset("F1").unwrap();
        let e = farneback_flow(&GrayPlane::filled(10, 10, 0.0), &GrayPlane::filled(11, 10, 0.0), &p);
        assert!(matches!(e, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn presets_match_grid() {
        let f5 = FlowParams::preset("f5").unwrap();
        assert_eq!((f5.resize_w, f5.window_size, f5.pyramid_levels, f5.iterations), (320, 21, 4, 3));
        let f1 = FlowParams::preset("F1").unwrap();
        assert_eq!((f1.resize_w, f1.resize_h, f1.window_size), (224, 126, 15));
        assert!(FlowParams::preset("F7").is_none());
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn inverse_of_normal_block() {
        let m = [[2.0, 1.0, 0.5], [1.0, 3.0, 0.2], [0.5, 0.2, 4.0]];
        let inv = invert3(m);
        for i in 0..3 {
            for j in 0..3 {
                let v: f64 = (0..3).map(|k| m[i][k] * inv[k][j]).sum();
                assert!((v - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }
}
