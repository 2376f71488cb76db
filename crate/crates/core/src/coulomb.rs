//! Coulomb counting.
//!
//! Current is positive while charging, so discharge capacity
//! `q_dc(t) = -(1/3600) ∫ i_b dτ` grows during discharge and always starts
//! at zero.

use alloc::vec::Vec;

use crate::error::{Error, Result};

const SECONDS_PER_HOUR: f64 = 3600.0;

/// Running sum with Neumaier compensation. Long traces at fine time steps
/// otherwise lose digits in the cumulative integral.
#[derive(Debug, Default, Clone, Copy)]
struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Cumulative discharge capacity in Ah by the trapezoidal rule.
///
/// Time steps may be non-uniform. `q_dc[0]` is always exactly zero.
pub fn integrate_discharge(time_s: &[f64], current_a: &[f64]) -> Result<Vec<f64>> {
    if time_s.len() != current_a.len() {
        return Err(Error::LengthMismatch {
            left: time_s.len(),
            right: current_a.len(),
        });
    }
    if let Some(index) = time_s
        .iter()
        .zip(current_a)
        .position(|(t, i)| !t.is_finite() || !i.is_finite())
    {
        return Err(Error::NonFinite { index });
    }
    if let Some(k) = time_s.windows(2).position(|w| w[1] <= w[0]) {
        return Err(Error::NonMonotonicTime { index: k + 1 });
    }

    let mut q = Vec::with_capacity(time_s.len());
    if time_s.is_empty() {
        return Ok(q);
    }
    q.push(0.0);
    // Accumulate in ampere-seconds, convert once per sample.
    let mut charge = CompensatedSum::default();
    for k in 1..time_s.len() {
        let dt = time_s[k] - time_s[k - 1];
        charge.add(0.5 * (current_a[k - 1] + current_a[k]) * dt);
        q.push(-charge.value() / SECONDS_PER_HOUR);
    }
    Ok(q)
}

/// SOC after withdrawing `q_dc` Ah from a cell of `capacity` Ah that
/// started at `z0`. Not clamped to `[0, 1]`.
pub fn soc_from_qdc(q_dc: f64, z0: f64, capacity: f64) -> Result<f64> {
    if !(capacity > 0.0) {
        return Err(Error::NonPositiveCapacity(capacity));
    }
    Ok(z0 - q_dc / capacity)
}

/// Time-stamped current with optional paired OCV samples and the discharge
/// capacity integrated from them.
#[derive(Debug, Clone, PartialEq)]
pub struct DischargeTrace {
    time_s: Vec<f64>,
    current_a: Vec<f64>,
    ocv_v: Option<Vec<f64>>,
    q_dc: Vec<f64>,
}

impl DischargeTrace {
    /// Builds a trace and integrates its discharge capacity.
    pub fn new(time_s: Vec<f64>, current_a: Vec<f64>, ocv_v: Option<Vec<f64>>) -> Result<Self> {
        if let Some(v) = &ocv_v {
            if v.len() != time_s.len() {
                return Err(Error::LengthMismatch {
                    left: time_s.len(),
                    right: v.len(),
                });
            }
            if let Some(index) = v.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite { index });
            }
        }
        let q_dc = integrate_discharge(&time_s, &current_a)?;
        Ok(Self {
            time_s,
            current_a,
            ocv_v,
            q_dc,
        })
    }

    /// For generators that know `q_dc` in closed form.
    pub(crate) fn from_parts(
        time_s: Vec<f64>,
        current_a: Vec<f64>,
        ocv_v: Option<Vec<f64>>,
        q_dc: Vec<f64>,
    ) -> Self {
        debug_assert_eq!(time_s.len(), q_dc.len());
        debug_assert!(q_dc.first().is_none_or(|q| *q == 0.0));
        Self {
            time_s,
            current_a,
            ocv_v,
            q_dc,
        }
    }

    pub fn len(&self) -> usize {
        self.time_s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time_s.is_empty()
    }

    pub fn time_s(&self) -> &[f64] {
        &self.time_s
    }

    pub fn current_a(&self) -> &[f64] {
        &self.current_a
    }

    pub fn ocv_v(&self) -> Option<&[f64]> {
        self.ocv_v.as_deref()
    }

    pub fn q_dc(&self) -> &[f64] {
        &self.q_dc
    }

    /// Keeps every `stride`-th sample plus the last one. Discharge capacity
    /// is carried over from the full-resolution integral, not recomputed.
    pub fn resample(&self, stride: usize) -> Self {
        let stride = stride.max(1);
        let n = self.len();
        if stride == 1 || n == 0 {
            return self.clone();
        }
        let mut keep: Vec<usize> = (0..n).step_by(stride).collect();
        if keep.last() != Some(&(n - 1)) {
            keep.push(n - 1);
        }
        let pick = |xs: &[f64]| keep.iter().map(|&i| xs[i]).collect::<Vec<_>>();
        Self {
            time_s: pick(&self.time_s),
            current_a: pick(&self.current_a),
            ocv_v: self.ocv_v.as_deref().map(pick),
            q_dc: pick(&self.q_dc),
        }
    }
}
