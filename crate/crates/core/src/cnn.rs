//! Two conv blocks, adaptive average pooling and a linear head.
//!
//! Accepts single-channel square images of any even side, so the same
//! parameters serve every resolution.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CnnShape {
    pub c1: usize,
    pub c2: usize,
    /// Adaptive pooling output is `pool x pool` per channel.
    pub pool: usize,
    pub classes: usize,
}

impl Default for CnnShape {
    fn default() -> Self {
        CnnShape { c1: 8, c2: 16, pool: 2, classes: 2 }
    }
}

impl CnnShape {
    fn sizes(&self) -> [usize; 6] {
        [
            self.c1 * 9,
            self.c1,
            self.c2 * self.c1 * 9,
            self.c2,
            self.classes * self.feature_dim(),
            self.classes,
        ]
    }

    pub fn feature_dim(&self) -> usize {
        self.c2 * self.pool * self.pool
    }

    pub fn param_count(&self) -> usize {
        self.sizes().iter().sum()
    }
}

#[derive(Debug, Clone)]
pub struct Cnn {
    pub shape: CnnShape,
    params: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct CnnTrace {
    side: usize,
    input: Vec<f64>,
    a1: Vec<f64>,
    p1: Vec<f64>,
    a2: Vec<f64>,
    feat: Vec<f64>,
    logits: Vec<f64>,
}

impl CnnTrace {
    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn features(&self) -> &[f64] {
        &self.feat
    }
}

fn conv3x3(input: &[f64], cin: usize, side: usize, w: &[f64], b: &[f64], out: &mut Vec<f64>) {
    let cout = b.len();
    out.clear();
    out.resize(cout * side * side, 0.0);
    let s = side as isize;
    for o in 0..cout {
        let plane = &mut out[o * side * side..(o + 1) * side * side];
        plane.iter_mut().for_each(|v| *v = b[o]);
        for i in 0..cin {
            let src = &input[i * side * side..(i + 1) * side * side];
            let k = &w[(o * cin + i) * 9..(o * cin + i + 1) * 9];
            for r in 0..s {
                for c in 0..s {
                    let mut acc = 0.0;
                    for dr in -1..=1isize {
                        let rr = r + dr;
                        if rr < 0 || rr >= s {
                            continue;
                        }
                        for dc in -1..=1isize {
                            let cc = c + dc;
                            if cc < 0 || cc >= s {
                                continue;
                            }
                            acc += k[((dr + 1) * 3 + dc + 1) as usize] * src[(rr * s + cc) as usize];
                        }
                    }
                    plane[(r * s + c) as usize] += acc;
                }
            }
        }
    }
}

/// Adds `dW`, `db` to the gradient slices and returns `dinput` if asked.
#[allow(clippy::too_many_arguments)]
fn conv3x3_backward(
    input: &[f64],
    cin: usize,
    side: usize,
    w: &[f64],
    dout: &[f64],
    gw: &mut [f64],
    gb: &mut [f64],
    dinput: Option<&mut Vec<f64>>,
) {
    let cout = gb.len();
    let s = side as isize;
    let mut din = dinput;
    if let Some(d) = din.as_deref_mut() {
        d.clear();
        d.resize(cin * side * side, 0.0);
    }
    for o in 0..cout {
        let dplane = &dout[o * side * side..(o + 1) * side * side];
        gb[o] += dplane.iter().sum::<f64>();
        for i in 0..cin {
            let src = &input[i * side * side..(i + 1) * side * side];
            let base = (o * cin + i) * 9;
            for r in 0..s {
                for c in 0..s {
                    let g = dplane[(r * s + c) as usize];
                    if g == 0.0 {
                        continue;
                    }
                    for dr in -1..=1isize {
                        let rr = r + dr;
                        if rr < 0 || rr >= s {
                            continue;
                        }
                        for dc in -1..=1isize {
                            let cc = c + dc;
                            if cc < 0 || cc >= s {
                                continue;
                            }
                            let ki = ((dr + 1) * 3 + dc + 1) as usize;
                            let si = (rr * s + cc) as usize;
                            gw[base + ki] += g * src[si];
                            if let Some(d) = din.as_deref_mut() {
                                d[i * side * side + si] += g * w[base + ki];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn avg_pool2(input: &[f64], ch: usize, side: usize) -> Vec<f64> {
    let h = side / 2;
    let mut out = vec![0.0; ch * h * h];
    for c in 0..ch {
        for r in 0..h {
            for q in 0..h {
                let at = |rr: usize, cc: usize| input[c * side * side + rr * side + cc];
                out[c * h * h + r * h + q] =
                    0.25 * (at(2 * r, 2 * q) + at(2 * r + 1, 2 * q) + at(2 * r, 2 * q + 1) + at(2 * r + 1, 2 * q + 1));
            }
        }
    }
    out
}

fn avg_pool2_backward(dout: &[f64], ch: usize, side: usize) -> Vec<f64> {
    let h = side / 2;
    let mut din = vec![0.0; ch * side * side];
    for c in 0..ch {
        for r in 0..side {
            for q in 0..side {
                din[c * side * side + r * side + q] = 0.25 * dout[c * h * h + (r / 2) * h + q / 2];
            }
        }
    }
    din
}

fn bins(n: usize, g: usize) -> Vec<(usize, usize)> {
    (0..g).map(|i| (i * n / g, ((i + 1) * n).div_ceil(g))).collect()
}

fn adaptive_pool(input: &[f64], ch: usize, side: usize, g: usize) -> Vec<f64> {
    let b = bins(side, g);
    let mut out = Vec::with_capacity(ch * g * g);
    for c in 0..ch {
        for &(r0, r1) in &b {
            for &(c0, c1) in &b {
                let mut acc = 0.0;
                for r in r0..r1 {
                    for q in c0..c1 {
                        acc += input[c * side * side + r * side + q];
                    }
                }
                out.push(acc / ((r1 - r0) * (c1 - c0)) as f64);
            }
        }
    }
    out
}

fn adaptive_pool_backward(dout: &[f64], ch: usize, side: usize, g: usize) -> Vec<f64> {
    let b = bins(side, g);
    let mut din = vec![0.0; ch * side * side];
    let mut k = 0;
    for c in 0..ch {
        for &(r0, r1) in &b {
            for &(c0, c1) in &b {
                let share = dout[k] / ((r1 - r0) * (c1 - c0)) as f64;
                k += 1;
                for r in r0..r1 {
                    for q in c0..c1 {
                        din[c * side * side + r * side + q] += share;
                    }
                }
            }
        }
    }
    din
}

impl Cnn {
    pub fn init<R: Rng>(shape: CnnShape, rng: &mut R) -> Self {
        let fans = [9, 0, shape.c1 * 9, 0, shape.feature_dim(), 0];
        let mut params = Vec::with_capacity(shape.param_count());
        for (size, fan) in shape.sizes().into_iter().zip(fans) {
            if fan == 0 {
                params.extend(std::iter::repeat_n(0.0, size));
            } else {
                let n = Normal::new(0.0, (2.0 / fan as f64).sqrt()).expect("positive std");
                params.extend((0..size).map(|_| n.sample(rng)));
            }
        }
        Cnn { shape, params }
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn split(&self) -> [std::ops::Range<usize>; 6] {
        let s = self.shape.sizes();
        let mut at = 0;
        let mut r: [std::ops::Range<usize>; 6] = Default::default();
        for (i, n) in s.into_iter().enumerate() {
            r[i] = at..at + n;
            at += n;
        }
        r
    }

    pub fn check_side(&self, side: usize) -> Result<()> {
        if side < 2 || !side.is_multiple_of(2) || side / 2 < 1 {
            return Err(Error::Shape(format!("cnn needs an even side >= 2, got {side}")));
        }
        Ok(())
    }

    /// `x` is a row-major `side x side` image.
    pub fn forward(&self, x: &[f64], side: usize, t: &mut CnnTrace) {
        let sh = self.shape;
        let r = self.split();
        let p = &self.params;
        t.side = side;
        t.input.clear();
        t.input.extend_from_slice(x);
        conv3x3(x, 1, side, &p[r[0].clone()], &p[r[1].clone()], &mut t.a1);
        t.a1.iter_mut().for_each(|v| *v = v.max(0.0));
        t.p1 = avg_pool2(&t.a1, sh.c1, side);
        let half = side / 2;
        conv3x3(&t.p1, sh.c1, half, &p[r[2].clone()], &p[r[3].clone()], &mut t.a2);
        t.a2.iter_mut().for_each(|v| *v = v.max(0.0));
        t.feat = adaptive_pool(&t.a2, sh.c2, half, sh.pool);
        let (hw, hb) = (&p[r[4].clone()], &p[r[5].clone()]);
        let f = sh.feature_dim();
        t.logits = hb
            .iter()
            .zip(hw.chunks_exact(f))
            .map(|(b, row)| b + row.iter().zip(&t.feat).map(|(w, a)| w * a).sum::<f64>())
            .collect();
    }

    /// Adds parameter gradients for `dlogits` (plus `dfeat` at the pooled features).
    pub fn backward(&self, t: &CnnTrace, dlogits: &[f64], dfeat: Option<&[f64]>, grad: &mut [f64]) {
        let sh = self.shape;
        let r = self.split();
        let p = &self.params;
        let f = sh.feature_dim();
        let mut df = dfeat.map_or_else(|| vec![0.0; f], <[f64]>::to_vec);
        {
            let (gw, rest) = grad[r[4].start..r[5].end].split_at_mut(r[4].len());
            for (k, &d) in dlogits.iter().enumerate() {
                rest[k] += d;
                for j in 0..f {
                    gw[k * f + j] += d * t.feat[j];
                    df[j] += d * p[r[4].start + k * f + j];
                }
            }
        }
        let half = t.side / 2;
        let mut da2 = adaptive_pool_backward(&df, sh.c2, half, sh.pool);
        da2.iter_mut().zip(&t.a2).for_each(|(d, a)| {
            if *a <= 0.0 {
                *d = 0.0
            }
        });
        let mut dp1 = Vec::new();
        {
            let (gw, gb) = grad[r[2].start..r[3].end].split_at_mut(r[2].len());
            conv3x3_backward(&t.p1, sh.c1, half, &p[r[2].clone()], &da2, gw, gb, Some(&mut dp1));
        }
        let mut da1 = avg_pool2_backward(&dp1, sh.c1, t.side);
        da1.iter_mut().zip(&t.a1).for_each(|(d, a)| {
            if *a <= 0.0 {
                *d = 0.0
            }
        });
        let (gw, gb) = grad[r[0].start..r[1].end].split_at_mut(r[0].len());
        conv3x3_backward(&t.input, 1, t.side, &p[r[0].clone()], &da1, gw, gb, None);
    }
}
