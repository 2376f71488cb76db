//! The OCV–SOC reference relationship.
//!
//! A curve is a table of `(soc, ocv)` knots, strictly increasing in both
//! coordinates, queried by piecewise-linear interpolation in either
//! direction. Queries outside the table are errors: OCV is undefined past
//! the cut-off voltages, so nothing here extrapolates.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Step used to break ties left behind by [`enforce_monotone`], in volts.
pub const TIE_STEP_V: f64 = 1e-9;

/// Closed SOC interval covered by a curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SocRange {
    pub lo: f64,
    pub hi: f64,
}

impl SocRange {
    #[inline]
    pub fn contains(&self, z: f64) -> bool {
        z >= self.lo && z <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// A bijective, piecewise-linear OCV–SOC relationship.
///
/// Immutable once built; every constructor path goes through the same
/// validation so the invariants (equal lengths ≥ 2, both axes strictly
/// increasing, SOC in `[0, 1]`, OCV finite and positive) always hold.
#[derive(Debug, Clone, PartialEq)]
pub struct OcvCurve {
    soc: Vec<f64>,
    ocv: Vec<f64>,
    label: String,
}

impl OcvCurve {
    /// Validates and builds a curve. Samples may come in any order; they are
    /// sorted by SOC first.
    pub fn new(soc: Vec<f64>, ocv: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        if soc.len() != ocv.len() {
            return Err(Error::LengthMismatch {
                left: soc.len(),
                right: ocv.len(),
            });
        }
        if soc.len() < 2 {
            return Err(Error::TooFewSamples {
                required: 2,
                got: soc.len(),
            });
        }
        if let Some(index) = soc
            .iter()
            .zip(&ocv)
            .position(|(s, v)| !s.is_finite() || !v.is_finite())
        {
            return Err(Error::NonFinite { index });
        }

        let (soc, ocv) = sort_by_soc(soc, ocv);

        if let Some(&z) = soc.iter().find(|z| !(0.0..=1.0).contains(*z)) {
            return Err(Error::SocNotFraction(z));
        }
        if let Some(&v) = ocv.iter().find(|v| **v <= 0.0) {
            return Err(Error::NonPositiveOcv(v));
        }
        for i in 1..soc.len() {
            if soc[i] <= soc[i - 1] || ocv[i] <= ocv[i - 1] {
                return Err(Error::NonMonotonic { index: i });
            }
        }

        Ok(Self {
            soc,
            ocv,
            label: label.into(),
        })
    }

    /// Runs [`enforce_monotone`] on the samples before building.
    pub fn new_repaired(soc: Vec<f64>, ocv: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        if soc.len() != ocv.len() {
            return Err(Error::LengthMismatch {
                left: soc.len(),
                right: ocv.len(),
            });
        }
        let (soc, ocv) = enforce_monotone(soc, ocv);
        Self::new(soc, ocv, label)
    }

    pub fn soc(&self) -> &[f64] {
        &self.soc
    }

    pub fn ocv(&self) -> &[f64] {
        &self.ocv
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn len(&self) -> usize {
        self.soc.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn soc_range(&self) -> SocRange {
        SocRange {
            lo: self.soc[0],
            hi: self.soc[self.soc.len() - 1],
        }
    }

    /// `(min, max)` OCV in volts.
    pub fn ocv_range(&self) -> (f64, f64) {
        (self.ocv[0], self.ocv[self.ocv.len() - 1])
    }

    /// OCV at state of charge `z`. Exact at knots.
    pub fn interp_ocv(&self, z: f64) -> Result<f64> {
        lookup(&self.soc, &self.ocv, z).ok_or(Error::SocOutOfRange(z))
    }

    /// SOC whose OCV is `v`; the inverse of [`interp_ocv`](Self::interp_ocv).
    pub fn interp_soc(&self, v: f64) -> Result<f64> {
        lookup(&self.ocv, &self.soc, v).ok_or(Error::OcvOutOfRange(v))
    }

    pub(crate) fn cursor(&self) -> Cursor<'_> {
        Cursor {
            soc: &self.soc,
            ocv: &self.ocv,
            seg: 0,
        }
    }
}

fn sort_by_soc(soc: Vec<f64>, ocv: Vec<f64>) -> (Vec<f64>, Vec<f64>) {
    if soc.windows(2).all(|w| w[0] <= w[1]) {
        return (soc, ocv);
    }
    let mut pairs: Vec<(f64, f64)> = soc.into_iter().zip(ocv).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Linear interpolation of `ys` over increasing `xs` between knots `i` and `i + 1`.
#[inline]
fn lerp(xs: &[f64], ys: &[f64], i: usize, x: f64) -> f64 {
    if x == xs[i] {
        return ys[i];
    }
    if x == xs[i + 1] {
        return ys[i + 1];
    }
    let t = (x - xs[i]) / (xs[i + 1] - xs[i]);
    ys[i] + (ys[i + 1] - ys[i]) * t
}

fn lookup(xs: &[f64], ys: &[f64], x: f64) -> Option<f64> {
    let last = xs.len() - 1;
    // NaN fails both comparisons.
    if !(x >= xs[0] && x <= xs[last]) {
        return None;
    }
    // Number of knots <= x, at least 1 here.
    let upto = xs.partition_point(|&k| k <= x);
    let seg = (upto - 1).min(last - 1);
    Some(lerp(xs, ys, seg, x))
}

/// Forward lookup that remembers the last segment. Sequential queries over
/// a discharge walk neighbouring segments, so hunting from the previous
/// position beats a fresh binary search. Results are bit-identical to
/// [`OcvCurve::interp_ocv`].
#[derive(Debug, Clone)]
pub(crate) struct Cursor<'a> {
    soc: &'a [f64],
    ocv: &'a [f64],
    seg: usize,
}

impl Cursor<'_> {
    #[inline]
    pub(crate) fn ocv(&mut self, z: f64) -> Option<f64> {
        let xs = self.soc;
        let last = xs.len() - 1;
        if !(z >= xs[0] && z <= xs[last]) {
            return None;
        }
        let mut seg = self.seg;
        // Canonical segment: the last i < last with xs[i] <= z.
        while seg > 0 && xs[seg] > z {
            seg -= 1;
        }
        while seg + 1 < last && xs[seg + 1] <= z {
            seg += 1;
        }
        self.seg = seg;
        Some(lerp(xs, self.ocv, seg, z))
    }
}

/// Repairs noisy OCV samples so they form a valid curve.
///
/// Samples are sorted by SOC, the OCV sequence is replaced by its
/// least-squares non-decreasing fit (pool adjacent violators), and any
/// remaining ties are lifted by [`TIE_STEP_V`] per step so the result is
/// strictly increasing. Already strictly increasing input comes back
/// unchanged.
pub fn enforce_monotone(soc: Vec<f64>, ocv: Vec<f64>) -> (Vec<f64>, Vec<f64>) {
    let (soc, ocv) = sort_by_soc(soc, ocv);
    let mut fitted = pool_adjacent_violators(&ocv);
    for i in 1..fitted.len() {
        if fitted[i] <= fitted[i - 1] {
            fitted[i] = fitted[i - 1] + TIE_STEP_V;
        }
    }
    (soc, fitted)
}

/// Unweighted isotonic (non-decreasing) regression.
fn pool_adjacent_violators(values: &[f64]) -> Vec<f64> {
    // (sum, count) per pooled block
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(values.len());
    for &v in values {
        blocks.push((v, 1));
        while blocks.len() >= 2 {
            let (s1, n1) = blocks[blocks.len() - 1];
            let (s0, n0) = blocks[blocks.len() - 2];
            if s0 / n0 as f64 > s1 / n1 as f64 {
                blocks.pop();
                let top = blocks.len() - 1;
                blocks[top] = (s0 + s1, n0 + n1);
            } else {
                break;
            }
        }
    }
    let mut out = Vec::with_capacity(values.len());
    for (sum, n) in blocks {
        let mean = sum / n as f64;
        out.extend(core::iter::repeat_n(mean, n));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use approx::assert_relative_eq;

    fn simple() -> OcvCurve {
        OcvCurve::new(vec![0.0, 0.5, 1.0], vec![2.5, 3.6, 4.2], "t").unwrap()
    }

    #[test]
    fn builds_minimal_table() {
        let c = simple();
        assert_eq!(c.len(), 3);
        assert_eq!(c.soc_range(), SocRange { lo: 0.0, hi: 1.0 });
        assert_eq!(c.ocv_range(), (2.5, 4.2));
    }

    #[test]
    fn duplicate_knot_is_rejected() {
        let err =
            OcvCurve::new(vec![0.0, 0.5, 0.5, 1.0], vec![2.5, 3.5, 3.6, 4.2], "").unwrap_err();
        assert_eq!(err, Error::NonMonotonic { index: 2 });
    }

    #[test]
    fn decreasing_ocv_is_rejected() {
        let err = OcvCurve::new(vec![0.0, 0.5, 1.0], vec![2.5, 4.3, 4.2], "").unwrap_err();
        assert_eq!(err, Error::NonMonotonic { index: 2 });
    }

    #[test]
    fn reversed_input_is_sorted() {
        let c = OcvCurve::new(vec![1.0, 0.5, 0.0], vec![4.2, 3.6, 2.5], "t").unwrap();
        assert_eq!(c, simple());
    }

    #[test]
    fn construction_errors() {
        assert_eq!(
            OcvCurve::new(vec![0.0, 1.0], vec![3.0], "").unwrap_err(),
            Error::LengthMismatch { left: 2, right: 1 }
        );
        assert_eq!(
            OcvCurve::new(vec![0.0], vec![3.0], "").unwrap_err(),
            Error::TooFewSamples {
                required: 2,
                got: 1
            }
        );
        assert_eq!(
            OcvCurve::new(vec![0.0, f64::NAN], vec![3.0, 4.0], "").unwrap_err(),
            Error::NonFinite { index: 1 }
        );
        assert_eq!(
            OcvCurve::new(vec![0.0, 1.2], vec![3.0, 4.0], "").unwrap_err(),
            Error::SocNotFraction(1.2)
        );
        assert_eq!(
            OcvCurve::new(vec![0.0, 1.0], vec![-1.0, 4.0], "").unwrap_err(),
            Error::NonPositiveOcv(-1.0)
        );
    }

    #[test]
    fn forward_interpolation() {
        let c = simple();
        assert_eq!(c.interp_ocv(0.5).unwrap(), 3.6);
        assert_relative_eq!(c.interp_ocv(0.25).unwrap(), 3.05, max_relative = 1e-15);
        assert_eq!(c.interp_ocv(1.0).unwrap(), 4.2);
        assert_eq!(c.interp_ocv(0.0).unwrap(), 2.5);
        assert_eq!(c.interp_ocv(1.01), Err(Error::SocOutOfRange(1.01)));
        assert!(c.interp_ocv(-1e-12).is_err());
        assert!(c.interp_ocv(f64::NAN).is_err());
    }

    #[test]
    fn inverse_interpolation() {
        let c = simple();
        assert_eq!(c.interp_soc(3.6).unwrap(), 0.5);
        assert_relative_eq!(c.interp_soc(3.05).unwrap(), 0.25, max_relative = 1e-14);
        assert_eq!(c.interp_soc(2.0), Err(Error::OcvOutOfRange(2.0)));
    }

    #[test]
    fn cursor_matches_direct_lookup() {
        let c = OcvCurve::new(
            vec![0.0, 0.1, 0.3, 0.35, 0.8, 1.0],
            vec![2.5, 3.2, 3.5, 3.55, 3.9, 4.2],
            "",
        )
        .unwrap();
        let mut cur = c.cursor();
        let probes = [
            0.9, 0.1, 0.0, 1.0, 0.35, 0.34, 0.5, 0.05, 0.99, 0.3, 1.5, -0.1,
        ];
        for z in probes {
            assert_eq!(cur.ocv(z), c.interp_ocv(z).ok(), "z = {z}");
        }
    }

    #[test]
    fn repair_pools_violating_pair() {
        let (soc, ocv) = enforce_monotone(vec![0.0, 0.3, 0.6, 1.0], vec![2.5, 3.61, 3.60, 4.2]);
        assert_eq!(soc, vec![0.0, 0.3, 0.6, 1.0]);
        assert_eq!(ocv[0], 2.5);
        assert_relative_eq!(ocv[1], 3.605, max_relative = 1e-15);
        assert_eq!(ocv[2], ocv[1] + 1e-9);
        assert_eq!(ocv[3], 4.2);
    }

    #[test]
    fn repair_is_noop_on_monotone_input() {
        let soc = vec![0.0, 0.5, 1.0];
        let ocv = vec![2.5, 3.6, 4.2];
        assert_eq!(enforce_monotone(soc.clone(), ocv.clone()), (soc, ocv));
    }

    #[test]
    fn repair_lifts_plateau() {
        let (_, ocv) = enforce_monotone(vec![0.0, 0.5, 1.0], vec![3.0, 3.0, 3.0]);
        assert_eq!(ocv, vec![3.0, 3.0 + 1e-9, 3.0 + 1e-9 + 1e-9]);
        assert!(ocv.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn repaired_curve_builds() {
        let c = OcvCurve::new_repaired(vec![0.0, 0.3, 0.6, 1.0], vec![2.5, 3.61, 3.60, 4.2], "x")
            .unwrap();
        assert_eq!(c.len(), 4);
    }
}
