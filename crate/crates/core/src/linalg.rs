//! Small dense helpers shared by the fitting and scoring code.

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn with_cols(cols: usize) -> Self {
        Self {
            rows: 0,
            cols,
            data: Vec::new(),
        }
    }

    pub fn from_rows(cols: usize, data: Vec<f64>) -> Self {
        assert!(cols > 0 || data.is_empty(), "zero-width matrix with data");
        assert_eq!(data.len() % cols.max(1), 0, "ragged matrix data");
        Self {
            rows: if cols == 0 { 0 } else { data.len() / cols },
            cols,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn push_row(&mut self, row: &[f64]) {
        assert_eq!(row.len(), self.cols, "row width mismatch");
        self.data.extend_from_slice(row);
        self.rows += 1;
    }

    pub fn push_row_f32(&mut self, row: &[f32]) {
        assert_eq!(row.len(), self.cols, "row width mismatch");
        self.data.extend(row.iter().map(|&v| v as f64));
        self.rows += 1;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

const LANES: usize = 64;

#[inline(always)]
fn decode_into(src: &[u8], dst: &mut [f32]) {
    for (o, b) in dst.iter_mut().zip(src.chunks_exact(4)) {
        *o = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
    }
}

#[inline(always)]
fn finish(acc: &[f32; LANES], weights: &[f32], x: &[f32]) -> f64 {
    let full = weights.len() / LANES * LANES;
    let mut tail = 0.0f32;
    for (w, v) in weights[full..].iter().zip(&x[full..]) {
        tail += w * v;
    }
    acc.iter().map(|&a| a as f64).sum::<f64>() + tail as f64
}

#[inline(always)]
fn dot_f32_lanes(weights: &[f32], x: &[f32]) -> f64 {
    let mut acc = [0.0f32; LANES];
    for (w, v) in weights.chunks_exact(LANES).zip(x.chunks_exact(LANES)) {
        let w: &[f32; LANES] = w.try_into().expect("lane chunk");
        let v: &[f32; LANES] = v.try_into().expect("lane chunk");
        for lane in 0..LANES {
            acc[lane] += w[lane] * v[lane];
        }
    }
    finish(&acc, weights, x)
}

#[cfg(target_arch = "x86_64")]
mod wide {
    #[target_feature(enable = "avx2")]
    pub unsafe fn dot(weights: &[f32], x: &[f32]) -> f64 {
        super::dot_f32_lanes(weights, x)
    }

    #[target_feature(enable = "avx2")]
    pub unsafe fn decode(src: &[u8], dst: &mut [f32]) {
        super::decode_into(src, dst)
    }
}

#[inline]
fn has_avx2() -> bool {
    #[cfg(target_arch = "x86_64")]
    {
        std::is_x86_feature_detected!("avx2")
    }
    #[cfg(not(target_arch = "x86_64"))]
    {
        false
    }
}

/// Single-precision dot product summed in 64 fixed lanes, lanes reduced in `f64`.
///
/// The summation order is fixed and the wide path only changes instruction
/// selection (no fused multiply-add), so every target returns the same bits.
pub fn dot_f32(weights: &[f32], x: &[f32]) -> f64 {
    assert_eq!(weights.len(), x.len());
    #[cfg(target_arch = "x86_64")]
    if has_avx2() {
        // SAFETY: AVX2 support was checked at runtime.
        return unsafe { wide::dot(weights, x) };
    }
    dot_f32_lanes(weights, x)
}

/// Decodes little-endian `f32`s from `src` into `dst` (resized to fit).
pub fn decode_f32_le(src: &[u8], dst: &mut Vec<f32>) {
    dst.clear();
    dst.resize(src.len() / 4, 0.0);
    #[cfg(target_arch = "x86_64")]
    if has_avx2() {
        // SAFETY: AVX2 support was checked at runtime.
        return unsafe { wide::decode(src, dst) };
    }
    decode_into(src, dst)
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Linear-interpolated percentile (`q` in `[0, 1]`) of an already sorted slice.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_lane_dot_matches_naive() {
        for d in [37, 64, 200] {
            let w: Vec<f32> = (0..d).map(|i| (i as f32 * 0.37).sin()).collect();
            let x: Vec<f32> = (0..d).map(|i| (i as f32 * 0.11).cos()).collect();
            let naive: f64 = w.iter().zip(&x).map(|(a, b)| *a as f64 * *b as f64).sum();
            assert!((dot_f32(&w, &x) - naive).abs() < 1e-5);
        }
    }

    #[test]
    fn wide_and_portable_paths_agree_bitwise() {
        for d in [1, 63, 64, 65, 1000] {
            let w: Vec<f32> = (0..d).map(|i| (i as f32 * 0.37).sin() * 3.0).collect();
            let x: Vec<f32> = (0..d).map(|i| (i as f32 * 0.11).cos() * 1e3).collect();
            assert_eq!(dot_f32(&w, &x).to_bits(), dot_f32_lanes(&w, &x).to_bits());
            let bytes: Vec<u8> = x.iter().flat_map(|v| v.to_le_bytes()).collect();
            let mut out = Vec::new();
            decode_f32_le(&bytes, &mut out);
            assert_eq!(out, x);
        }
    }

    #[test]
    fn percentile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile_sorted(&v, 0.0), 1.0);
        assert_eq!(percentile_sorted(&v, 1.0), 4.0);
        assert!((percentile_sorted(&v, 0.5) - 2.5).abs() < 1e-15);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
