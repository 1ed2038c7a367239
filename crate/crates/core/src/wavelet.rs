//! Periodized multilevel discrete wavelet transform (1D and separable 2D),
//! band zeroing, and additive resolution triples.
//!
//! The transform is orthogonal: analysis is an orthonormal change of basis
//! and synthesis is its exact transpose, so reconstructions from disjoint
//! coefficient sets add up to the original signal.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Orthogonal wavelet families supported by the transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Wavelet {
    Haar,
    #[default]
    Db2,
}

impl Wavelet {
    pub fn filters(self) -> (Vec<f64>, Vec<f64>) {
        match self {
            Wavelet::Haar => {
                let s = std::f64::consts::FRAC_1_SQRT_2;
                let lo = vec![s, s];
                (lo.clone(), qmf(&lo))
            }
            Wavelet::Db2 => {
                let (lo, hi) = db2_filters();
                (lo.to_vec(), hi.to_vec())
            }
        }
    }
}

/// Daubechies-2 analysis pair `(lowpass, highpass)`.
pub fn db2_filters() -> ([f64; 4], [f64; 4]) {
    let s3 = 3f64.sqrt();
    let d = 4.0 * std::f64::consts::SQRT_2;
    let lo = [(1.0 + s3) / d, (3.0 + s3) / d, (3.0 - s3) / d, (1.0 - s3) / d];
    let hi = [lo[3], -lo[2], lo[1], -lo[0]];
    (lo, hi)
}

/// Quadrature mirror: `hi[k] = (-1)^k lo[L-1-k]`.
fn qmf(lo: &[f64]) -> Vec<f64> {
    let n = lo.len();
    (0..n)
        .map(|k| if k % 2 == 0 { lo[n - 1 - k] } else { -lo[n - 1 - k] })
        .collect()
}

/// Boundary handling. Only periodization gives a non-redundant orthogonal
/// transform at every dyadic length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum BoundaryMode {
    #[default]
    Periodized,
}

/// Coefficients `{a_J, d_J, ..., d_1}` of a multilevel transform.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletDecomposition {
    /// Approximation band; for 2D inputs a row-major `(rows/2^J) x (cols/2^J)` block.
    pub approx: Vec<f64>,
    /// Detail bands ordered coarsest first. In 2D one level's three
    /// orientations are concatenated into a single band.
    pub details: Vec<Vec<f64>>,
    pub levels: usize,
    pub original_shape: Vec<usize>,
    pub mode: BoundaryMode,
    pub wavelet: Wavelet,
}

impl WaveletDecomposition {
    pub fn coefficient_count(&self) -> usize {
        self.approx.len() + self.details.iter().map(Vec::len).sum::<usize>()
    }

    pub fn energy(&self) -> f64 {
        band_energy(&self.approx) + self.details.iter().map(|d| band_energy(d)).sum::<f64>()
    }

    /// Energy of the `k` finest detail bands.
    pub fn finest_energy(&self, k: usize) -> f64 {
        self.details[self.levels - k..].iter().map(|d| band_energy(d)).sum()
    }

    /// Copy with the `k` finest detail bands set to zero.
    pub fn zero_finest(&self, k: usize) -> Self {
        let mut out = self.clone();
        for band in &mut out.details[self.levels - k..] {
            band.iter_mut().for_each(|v| *v = 0.0);
        }
        out
    }

    /// Copy keeping only the `k` finest detail bands; everything else zero.
    pub fn keep_finest(&self, k: usize) -> Self {
        let mut out = self.clone();
        out.approx.iter_mut().for_each(|v| *v = 0.0);
        for band in &mut out.details[..self.levels - k] {
            band.iter_mut().for_each(|v| *v = 0.0);
        }
        out
    }
}

fn band_energy(b: &[f64]) -> f64 {
    b.iter().map(|v| v * v).sum()
}

/// One periodized analysis step; `x.len()` must be even.
fn analyze(x: &[f64], lo: &[f64], hi: &[f64], a: &mut [f64], d: &mut [f64]) {
    let n = x.len();
    for i in 0..n / 2 {
        let (mut sa, mut sd) = (0.0, 0.0);
        for k in 0..lo.len() {
            let v = x[(2 * i + k) % n];
            sa += lo[k] * v;
            sd += hi[k] * v;
        }
        a[i] = sa;
        d[i] = sd;
    }
}

/// Transpose of [`analyze`].
fn synthesize(a: &[f64], d: &[f64], lo: &[f64], hi: &[f64], x: &mut [f64]) {
    let n = 2 * a.len();
    x.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..a.len() {
        for k in 0..lo.len() {
            x[(2 * i + k) % n] += lo[k] * a[i] + hi[k] * d[i];
        }
    }
}

fn check_levels(shape: &[usize], levels: usize) -> Result<()> {
    if levels == 0 {
        return Err(Error::InvalidArgument("levels must be >= 1".into()));
    }
    let min_axis = *shape.iter().min().unwrap();
    if levels > min_axis.ilog2() as usize {
        return Err(Error::InvalidArgument(format!(
            "{levels} levels exceed log2 of the shortest axis ({min_axis})"
        )));
    }
    let step = 1usize << levels;
    for (axis, &n) in shape.iter().enumerate() {
        if n % step != 0 {
            return Err(Error::InvalidArgument(format!(
                "axis {axis} not divisible by {step}"
            )));
        }
    }
    Ok(())
}

/// Forward db2 transform of a rank-1 or rank-2 tensor.
pub fn dwt_forward(x: &Tensor, levels: usize) -> Result<WaveletDecomposition> {
    dwt_forward_with(x, levels, Wavelet::Db2)
}

pub fn dwt_forward_with(x: &Tensor, levels: usize, wavelet: Wavelet) -> Result<WaveletDecomposition> {
    let shape = x.shape().to_vec();
    if shape.len() > 2 {
        return Err(Error::Shape(format!(
            "dwt expects rank 1 or 2, got rank {}",
            shape.len()
        )));
    }
    check_levels(&shape, levels)?;
    let (lo, hi) = wavelet.filters();
    let mut details = Vec::with_capacity(levels);
    let approx = if shape.len() == 1 {
        let mut cur = x.data().to_vec();
        for _ in 0..levels {
            let half = cur.len() / 2;
            let mut a = vec![0.0; half];
            let mut d = vec![0.0; half];
            analyze(&cur, &lo, &hi, &mut a, &mut d);
            details.push(d);
            cur = a;
        }
        cur
    } else {
        let (mut rows, mut cols) = (shape[0], shape[1]);
        let mut cur = x.data().to_vec();
        for _ in 0..levels {
            let (ll, band) = analyze_2d(&cur, rows, cols, &lo, &hi);
            details.push(band);
            cur = ll;
            rows /= 2;
            cols /= 2;
        }
        cur
    };
    details.reverse();
    Ok(WaveletDecomposition {
        approx,
        details,
        levels,
        original_shape: shape,
        mode: BoundaryMode::Periodized,
        wavelet,
    })
}

/// One separable level: rows, then columns. Returns the LL block and the
/// concatenated (high-low, low-high, high-high) detail band.
fn analyze_2d(x: &[f64], rows: usize, cols: usize, lo: &[f64], hi: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (hr, hc) = (rows / 2, cols / 2);
    // rows: each row becomes [low | high]
    let mut tmp = vec![0.0; rows * cols];
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let (a, d) = tmp[r * cols..(r + 1) * cols].split_at_mut(hc);
        analyze(row, lo, hi, a, d);
    }
    // columns: each column becomes [low; high]
    let mut out = vec![0.0; rows * cols];
    let mut col = vec![0.0; rows];
    let mut a = vec![0.0; hr];
    let mut d = vec![0.0; hr];
    for c in 0..cols {
        for r in 0..rows {
            col[r] = tmp[r * cols + c];
        }
        analyze(&col, lo, hi, &mut a, &mut d);
        for r in 0..hr {
            out[r * cols + c] = a[r];
            out[(r + hr) * cols + c] = d[r];
        }
    }
    let quad = |r0: usize, c0: usize| -> Vec<f64> {
        let mut q = Vec::with_capacity(hr * hc);
        for r in 0..hr {
            q.extend_from_slice(&out[(r0 + r) * cols + c0..(r0 + r) * cols + c0 + hc]);
        }
        q
    };
    let ll = quad(0, 0);
    let mut band = quad(0, hc);
    band.extend(quad(hr, 0));
    band.extend(quad(hr, hc));
    (ll, band)
}

fn synthesize_2d(ll: &[f64], band: &[f64], rows: usize, cols: usize, lo: &[f64], hi: &[f64]) -> Vec<f64> {
    let (hr, hc) = (rows / 2, cols / 2);
    let q = hr * hc;
    let mut full = vec![0.0; rows * cols];
    let mut place = |src: &[f64], r0: usize, c0: usize| {
        for r in 0..hr {
            full[(r0 + r) * cols + c0..(r0 + r) * cols + c0 + hc]
                .copy_from_slice(&src[r * hc..(r + 1) * hc]);
        }
    };
    place(ll, 0, 0);
    place(&band[..q], 0, hc);
    place(&band[q..2 * q], hr, 0);
    place(&band[2 * q..], hr, hc);
    let mut tmp = vec![0.0; rows * cols];
    let mut a = vec![0.0; hr];
    let mut d = vec![0.0; hr];
    let mut col = vec![0.0; rows];
    for c in 0..cols {
        for r in 0..hr {
            a[r] = full[r * cols + c];
            d[r] = full[(r + hr) * cols + c];
        }
        synthesize(&a, &d, lo, hi, &mut col);
        for r in 0..rows {
            tmp[r * cols + c] = col[r];
        }
    }
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        let (a, d) = tmp[r * cols..(r + 1) * cols].split_at(hc);
        synthesize(a, d, lo, hi, &mut out[r * cols..(r + 1) * cols]);
    }
    out
}

/// Perfect-reconstruction inverse.
pub fn dwt_inverse(dec: &WaveletDecomposition) -> Result<Tensor> {
    let shape = &dec.original_shape;
    if shape.is_empty() || shape.len() > 2 {
        return Err(Error::Shape(format!("unsupported original shape {shape:?}")));
    }
    check_levels(shape, dec.levels)?;
    if dec.details.len() != dec.levels {
        return Err(Error::Shape(format!(
            "{} detail bands for {} levels",
            dec.details.len(),
            dec.levels
        )));
    }
    let scale = 1usize << dec.levels;
    let orient = if shape.len() == 2 { 3 } else { 1 };
    let coarse: usize = shape.iter().map(|&n| n / scale).product();
    if dec.approx.len() != coarse {
        return Err(Error::Shape(format!(
            "approximation band has {} coefficients, expected {coarse}",
            dec.approx.len()
        )));
    }
    for (j, band) in dec.details.iter().enumerate() {
        // band j sits at level J - j
        let s = scale >> j;
        let expected = orient * shape.iter().map(|&n| n / s).product::<usize>();
        if band.len() != expected {
            return Err(Error::Shape(format!(
                "detail band {j} has {} coefficients, expected {expected}",
                band.len()
            )));
        }
    }
    let (lo, hi) = dec.wavelet.filters();
    let mut cur = dec.approx.clone();
    if shape.len() == 1 {
        for band in &dec.details {
            let mut x = vec![0.0; 2 * cur.len()];
            synthesize(&cur, band, &lo, &hi, &mut x);
            cur = x;
        }
    } else {
        let (mut rows, mut cols) = (shape[0] / scale, shape[1] / scale);
        for band in &dec.details {
            rows *= 2;
            cols *= 2;
            cur = synthesize_2d(&cur, band, rows, cols, &lo, &hi);
        }
    }
    Tensor::new(shape.clone(), cur)
}

/// A datapoint at full resolution, its embedded low-resolution version and
/// the residual, with `x_h = x_l + x_r`.
#[derive(Debug, Clone)]
pub struct ResolutionTriple {
    pub x_h: Tensor,
    pub x_l: Tensor,
    pub x_r: Tensor,
    pub levels_removed: usize,
}

impl ResolutionTriple {
    pub fn additivity_error(&self) -> f64 {
        self.x_h
            .data()
            .iter()
            .zip(self.x_l.data().iter().zip(self.x_r.data()))
            .map(|(h, (l, r))| (h - (l + r)).abs())
            .fold(0.0, f64::max)
    }
}

/// Splits `x` by zeroing the `levels_removed` finest detail bands.
///
/// Rank-3 inputs are treated as `(channels, rows, cols)` and split per channel.
pub fn make_triple(x: &Tensor, levels: usize, levels_removed: usize) -> Result<ResolutionTriple> {
    make_triple_with(x, levels, levels_removed, Wavelet::Db2)
}

pub fn make_triple_with(
    x: &Tensor,
    levels: usize,
    levels_removed: usize,
    wavelet: Wavelet,
) -> Result<ResolutionTriple> {
    if levels_removed > levels {
        return Err(Error::InvalidArgument(format!(
            "levels_removed {levels_removed} exceeds levels {levels}"
        )));
    }
    let (x_l, x_r) = if x.rank() == 3 {
        let plane = x.shape()[1] * x.shape()[2];
        let mut lows = Vec::with_capacity(x.len());
        let mut res = Vec::with_capacity(x.len());
        for ch in x.data().chunks_exact(plane) {
            let t = Tensor::new(x.shape()[1..].to_vec(), ch.to_vec())?;
            let (l, r) = split(&t, levels, levels_removed, wavelet)?;
            lows.extend_from_slice(l.data());
            res.extend_from_slice(r.data());
        }
        (
            Tensor::new(x.shape().to_vec(), lows)?,
            Tensor::new(x.shape().to_vec(), res)?,
        )
    } else {
        split(x, levels, levels_removed, wavelet)?
    };
    Ok(ResolutionTriple {
        x_h: x.clone(),
        x_l,
        x_r,
        levels_removed,
    })
}

fn split(x: &Tensor, levels: usize, removed: usize, wavelet: Wavelet) -> Result<(Tensor, Tensor)> {
    if removed == 0 {
        // exact identity case: no reconstruction error at all
        return Ok((x.clone(), Tensor::zeros(x.shape().to_vec())));
    }
    let dec = dwt_forward_with(x, levels, wavelet)?;
    let x_l = dwt_inverse(&dec.zero_finest(removed))?;
    let x_r = dwt_inverse(&dec.keep_finest(removed))?;
    Ok((x_l, x_r))
}
