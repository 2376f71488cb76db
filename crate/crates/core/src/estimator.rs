//! Capacity and initial-SOC estimation by OCV alignment.
//!
//! For candidate capacity `C` and initial SOC `z0`, sample `k` of the aged
//! trace sits at calibrated SOC `z_k = z0 - q_dc[k] / C`. The fit minimises
//!
//! ```text
//! J(C, z0) = Σ_k (v_oc[k] - V_nominal(z_k))²
//! ```
//!
//! over a bound box. Candidates that push any `z_k` outside the nominal
//! curve are infeasible rather than extrapolated.
//!
//! The search is a coarse grid scan followed by Nelder–Mead refinement from
//! the best cell. [`grid_oracle`] is an independent brute-force check: it
//! goes through the public [`EstimationProblem::objective`] (binary-search
//! interpolation) while the solver uses its own sequential lookup.

use alloc::vec::Vec;

use crate::coulomb::DischargeTrace;
use crate::curve::OcvCurve;
use crate::error::{Error, Result};
use crate::nelder_mead::{self, Point};

/// OCV samples spanning less than this are treated as unidentifiable.
pub const MIN_OCV_SPAN_V: f64 = 1e-3;

/// Results with a smaller [`EstimationResult::flatness_indicator`] are
/// flagged as weakly identifiable.
pub const FLATNESS_WARN: f64 = 1e-6;

/// Restarts of the simplex after its first convergence.
const MAX_RESTARTS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Stage-1 grid points along the capacity axis.
    pub grid_capacity: usize,
    /// Stage-1 grid points along the initial-SOC axis.
    pub grid_z0: usize,
    /// Iteration budget per simplex run.
    pub max_iter: usize,
    /// Simplex objective spread (V²) treated as converged.
    pub spread_tol: f64,
    /// Central-difference step for the flatness diagnostic, as a fraction
    /// of each bound width.
    pub jacobian_step: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            grid_capacity: 64,
            grid_z0: 64,
            max_iter: 500,
            spread_tol: 1e-14,
            jacobian_step: 1e-6,
        }
    }
}

/// Nominal curve, aged-cell samples and the search box.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimationProblem {
    nominal: OcvCurve,
    q_dc: Vec<f64>,
    v_oc: Vec<f64>,
    nominal_capacity: f64,
    capacity_bounds: (f64, f64),
    z0_bounds: (f64, f64),
    options: SolverOptions,
}

impl EstimationProblem {
    /// Builds a problem with the default search box: capacity in
    /// `[0.3, 1.5] * nominal_capacity` and initial SOC in `[0, 1]`.
    pub fn new(
        nominal: OcvCurve,
        q_dc: Vec<f64>,
        v_oc: Vec<f64>,
        nominal_capacity: f64,
    ) -> Result<Self> {
        if q_dc.len() != v_oc.len() {
            return Err(Error::LengthMismatch {
                left: q_dc.len(),
                right: v_oc.len(),
            });
        }
        if q_dc.len() < 3 {
            return Err(Error::TooFewSamples {
                required: 3,
                got: q_dc.len(),
            });
        }
        if let Some(index) = q_dc
            .iter()
            .zip(&v_oc)
            .position(|(q, v)| !q.is_finite() || !v.is_finite())
        {
            return Err(Error::NonFinite { index });
        }
        if q_dc[0] != 0.0 {
            return Err(Error::InvalidProblem("q_dc must start at zero"));
        }
        if !(nominal_capacity > 0.0) || !nominal_capacity.is_finite() {
            return Err(Error::NonPositiveCapacity(nominal_capacity));
        }
        Ok(Self {
            nominal,
            q_dc,
            v_oc,
            nominal_capacity,
            capacity_bounds: (0.3 * nominal_capacity, 1.5 * nominal_capacity),
            z0_bounds: (0.0, 1.0),
            options: SolverOptions::default(),
        })
    }

    /// Takes `q_dc` and OCV from a trace. Fails with [`Error::MissingOcv`]
    /// when the trace carries no OCV column.
    pub fn from_trace(
        nominal: OcvCurve,
        trace: &DischargeTrace,
        nominal_capacity: f64,
    ) -> Result<Self> {
        let v_oc = trace.ocv_v().ok_or(Error::MissingOcv)?;
        Self::new(
            nominal,
            trace.q_dc().to_vec(),
            v_oc.to_vec(),
            nominal_capacity,
        )
    }

    pub fn with_capacity_bounds(mut self, lo: f64, hi: f64) -> Result<Self> {
        if !(lo > 0.0) || !lo.is_finite() {
            return Err(Error::InvalidProblem(
                "capacity lower bound must be positive",
            ));
        }
        if !(hi > lo) || !hi.is_finite() {
            return Err(Error::InvalidProblem(
                "capacity bounds must satisfy lo < hi",
            ));
        }
        self.capacity_bounds = (lo, hi);
        Ok(self)
    }

    pub fn with_z0_bounds(mut self, lo: f64, hi: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) {
            return Err(Error::InvalidProblem(
                "initial SOC bounds must lie in [0, 1]",
            ));
        }
        if !(hi > lo) {
            return Err(Error::InvalidProblem(
                "initial SOC bounds must satisfy lo < hi",
            ));
        }
        self.z0_bounds = (lo, hi);
        Ok(self)
    }

    pub fn with_options(mut self, options: SolverOptions) -> Result<Self> {
        if options.grid_capacity < 2 || options.grid_z0 < 2 {
            return Err(Error::InvalidProblem(
                "grid needs at least 2 points per axis",
            ));
        }
        if !(options.spread_tol >= 0.0) || !(options.jacobian_step > 0.0) {
            return Err(Error::InvalidProblem("solver tolerances must be positive"));
        }
        self.options = options;
        Ok(self)
    }

    pub fn nominal(&self) -> &OcvCurve {
        &self.nominal
    }

    pub fn q_dc(&self) -> &[f64] {
        &self.q_dc
    }

    pub fn v_oc(&self) -> &[f64] {
        &self.v_oc
    }

    pub fn nominal_capacity(&self) -> f64 {
        self.nominal_capacity
    }

    pub fn capacity_bounds(&self) -> (f64, f64) {
        self.capacity_bounds
    }

    pub fn z0_bounds(&self) -> (f64, f64) {
        self.z0_bounds
    }

    pub fn options(&self) -> &SolverOptions {
        &self.options
    }

    pub fn n_residuals(&self) -> usize {
        self.q_dc.len()
    }

    /// Sub-problem over samples `[start, end)`, with discharge capacity
    /// re-based to zero at `start` so that `z0` means the SOC at the start of
    /// the window. Bounds and options carry over.
    pub fn window(&self, start: usize, end: usize) -> Result<Self> {
        if end > self.q_dc.len() || start >= end || end - start < 3 {
            return Err(Error::WindowTooSmall { start, end });
        }
        let base = self.q_dc[start];
        Ok(Self {
            q_dc: self.q_dc[start..end].iter().map(|q| q - base).collect(),
            v_oc: self.v_oc[start..end].to_vec(),
            nominal: self.nominal.clone(),
            ..*self
        })
    }

    /// Sum of squared OCV residuals at `(capacity, z0)`, or `None` when some
    /// induced SOC falls outside the nominal curve.
    pub fn objective(&self, capacity: f64, z0: f64) -> Result<Option<f64>> {
        if !(capacity > 0.0) {
            return Err(Error::NonPositiveCapacity(capacity));
        }
        let mut sum = 0.0;
        for (q, v) in self.q_dc.iter().zip(&self.v_oc) {
            let z = z0 - q / capacity;
            match self.nominal.interp_ocv(z) {
                Ok(model) => {
                    let r = v - model;
                    sum += r * r;
                }
                Err(_) => return Ok(None),
            }
        }
        Ok(Some(sum))
    }

    /// Solver-side objective: same arithmetic as [`objective`](Self::objective)
    /// but with a sequential lookup, and `+inf` for infeasible points.
    fn cost(&self, capacity: f64, z0: f64) -> f64 {
        if !(capacity > 0.0) {
            return f64::INFINITY;
        }
        let mut cursor = self.nominal.cursor();
        let mut sum = 0.0;
        for (q, v) in self.q_dc.iter().zip(&self.v_oc) {
            match cursor.ocv(z0 - q / capacity) {
                Some(model) => {
                    let r = v - model;
                    sum += r * r;
                }
                None => return f64::INFINITY,
            }
        }
        sum
    }

    fn ocv_span(&self) -> f64 {
        let (lo, hi) = self
            .v_oc
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        hi - lo
    }
}

/// Affine map from the uncalibrated, 1-initialised SOC `1 - q_dc / C_n` to
/// the calibrated SOC: `z = k * z_tilde + b` with `k = C_n / C_a` and
/// `b = z0 - k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SocTransform {
    pub k: f64,
    pub b: f64,
}

impl SocTransform {
    pub fn new(nominal_capacity: f64, capacity: f64, z0: f64) -> Result<Self> {
        if !(capacity > 0.0) {
            return Err(Error::NonPositiveCapacity(capacity));
        }
        if !(nominal_capacity > 0.0) {
            return Err(Error::NonPositiveCapacity(nominal_capacity));
        }
        let k = nominal_capacity / capacity;
        Ok(Self { k, b: z0 - k })
    }

    pub fn identity() -> Self {
        Self { k: 1.0, b: 0.0 }
    }

    pub fn apply(&self, z_tilde: f64) -> f64 {
        self.k * z_tilde + self.b
    }
}

pub fn apply_transform(transform: &SocTransform, z_tilde: f64) -> f64 {
    transform.apply(z_tilde)
}

/// `1 - q_dc / nominal_capacity`.
pub fn uncalibrated_soc(q_dc: f64, nominal_capacity: f64) -> Result<f64> {
    if !(nominal_capacity > 0.0) {
        return Err(Error::NonPositiveCapacity(nominal_capacity));
    }
    Ok(1.0 - q_dc / nominal_capacity)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimationResult {
    /// Calibrated capacity, Ah.
    pub capacity: f64,
    /// SOC at the first sample.
    pub z0: f64,
    /// RMS alignment residual, V.
    pub rmse: f64,
    /// Sum of squared residuals, V².
    pub objective: f64,
    pub transform: SocTransform,
    pub n_residuals: usize,
    /// Smallest over largest eigenvalue of the Gauss–Newton normal matrix
    /// in bound-normalised parameters. Near zero means capacity and
    /// initial SOC trade off against each other along the data.
    pub flatness_indicator: f64,
    pub converged: bool,
    /// Simplex iterations over all restarts.
    pub iterations: usize,
    /// Sample window `[start, end)` when estimated on part of a trace.
    pub window: Option<(usize, usize)>,
}

impl EstimationResult {
    pub fn is_weakly_identifiable(&self) -> bool {
        self.flatness_indicator < FLATNESS_WARN
    }

    /// Calibrated SOC of a sample with discharge capacity `q_dc`.
    pub fn calibrated_soc(&self, q_dc: f64) -> f64 {
        self.z0 - q_dc / self.capacity
    }
}

/// Best cell of a brute-force grid scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OraclePoint {
    pub capacity: f64,
    pub z0: f64,
    pub objective: f64,
}

#[inline]
fn grid_value(lo: f64, hi: f64, i: usize, n: usize) -> f64 {
    if i + 1 == n {
        hi
    } else {
        lo + (hi - lo) * (i as f64 / (n - 1) as f64)
    }
}

/// Exhaustive scan of an `n_capacity × n_z0` grid spanning the bound box
/// (edges included). Ties go to the smallest capacity, then smallest z0.
pub fn grid_oracle(
    problem: &EstimationProblem,
    n_capacity: usize,
    n_z0: usize,
) -> Result<OraclePoint> {
    if n_capacity < 2 || n_z0 < 2 {
        return Err(Error::InvalidProblem(
            "grid needs at least 2 points per axis",
        ));
    }
    let (c_lo, c_hi) = problem.capacity_bounds;
    let (z_lo, z_hi) = problem.z0_bounds;
    let mut best: Option<OraclePoint> = None;
    for i in 0..n_capacity {
        let capacity = grid_value(c_lo, c_hi, i, n_capacity);
        for j in 0..n_z0 {
            let z0 = grid_value(z_lo, z_hi, j, n_z0);
            if let Some(objective) = problem.objective(capacity, z0)? {
                if best.is_none_or(|b| objective < b.objective) {
                    best = Some(OraclePoint {
                        capacity,
                        z0,
                        objective,
                    });
                }
            }
        }
    }
    best.ok_or(Error::NoFeasiblePoint)
}

/// Maps the unit square onto the bound box.
#[derive(Debug, Clone, Copy)]
struct BoxMap {
    c_lo: f64,
    c_width: f64,
    z_lo: f64,
    z_width: f64,
}

impl BoxMap {
    fn new(problem: &EstimationProblem) -> Self {
        let (c_lo, c_hi) = problem.capacity_bounds;
        let (z_lo, z_hi) = problem.z0_bounds;
        Self {
            c_lo,
            c_width: c_hi - c_lo,
            z_lo,
            z_width: z_hi - z_lo,
        }
    }

    fn to_params(self, u: Point) -> (f64, f64) {
        (
            self.c_lo + u[0] * self.c_width,
            self.z_lo + u[1] * self.z_width,
        )
    }
}

/// Simplex coordinates for stage 2: the highest and lowest SOC the trace
/// reaches, `top = z0 - q_min / C` and `bottom = z0 - q_max / C`.
///
/// A candidate is feasible exactly when `lo <= bottom < top <= hi` on the
/// curve's SOC range, a box the simplex can be clamped onto. In `(C, z0)`
/// the same boundary is curved, and a trace discharged to the lower
/// cut-off puts the optimum right on it.
#[derive(Debug, Clone, Copy)]
struct EndpointFrame {
    q_min: f64,
    q_max: f64,
    lo: f64,
    hi: f64,
}

impl EndpointFrame {
    fn new(problem: &EstimationProblem) -> Option<Self> {
        let (q_min, q_max) = problem
            .q_dc
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &q| {
                (lo.min(q), hi.max(q))
            });
        if !(q_max > q_min) {
            return None;
        }
        let range = problem.nominal.soc_range();
        // Keep clamped endpoints a hair inside the curve so rounding in the
        // round trip through (C, z0) cannot step outside it.
        let margin = 1e-12 * range.width();
        Some(Self {
            q_min,
            q_max,
            lo: range.lo + margin,
            hi: range.hi - margin,
        })
    }

    fn to_endpoints(self, capacity: f64, z0: f64) -> Point {
        [z0 - self.q_min / capacity, z0 - self.q_max / capacity]
    }

    fn project(self, w: Point) -> Point {
        [w[0].clamp(self.lo, self.hi), w[1].clamp(self.lo, self.hi)]
    }

    fn to_params(self, w: Point) -> Option<(f64, f64)> {
        let [top, bottom] = self.project(w);
        if !(top > bottom) {
            return None;
        }
        let capacity = (self.q_max - self.q_min) / (top - bottom);
        Some((capacity, top + self.q_min / capacity))
    }
}

/// Fits calibrated capacity and initial SOC.
///
/// Stage 1 scans the [`SolverOptions`] grid; stage 2 runs Nelder–Mead from
/// the best cell (restarting from its own optimum while that still
/// improves); stage 3 keeps the refined point only if it is no worse than
/// the grid cell. `converged` is false when the last simplex run ran out of
/// iterations before its objective spread fell under tolerance.
pub fn estimate(problem: &EstimationProblem) -> Result<EstimationResult> {
    let span_v = problem.ocv_span();
    if span_v < MIN_OCV_SPAN_V {
        return Err(Error::DegenerateData { span_v });
    }
    let opts = problem.options;
    let map = BoxMap::new(problem);

    // Stage 1
    let mut grid_best: Option<(Point, f64)> = None;
    for i in 0..opts.grid_capacity {
        for j in 0..opts.grid_z0 {
            let u = [
                grid_value(0.0, 1.0, i, opts.grid_capacity),
                grid_value(0.0, 1.0, j, opts.grid_z0),
            ];
            let (c, z0) = map.to_params(u);
            let f = problem.cost(c, z0);
            if f.is_finite() && grid_best.is_none_or(|(_, fb)| f < fb) {
                grid_best = Some((u, f));
            }
        }
    }
    let (u_grid, f_grid) = grid_best.ok_or(Error::NoFeasiblePoint)?;

    // Stage 2
    let Some(frame) = EndpointFrame::new(problem) else {
        // No discharge at all: capacity is not observable, keep the grid cell.
        let (capacity, z0) = map.to_params(u_grid);
        return finish(problem, capacity, z0, f_grid, true, 0);
    };
    let (c_lo, c_hi) = problem.capacity_bounds;
    let (z_lo, z_hi) = problem.z0_bounds;
    let feasible = |w: Point| match frame.to_params(w) {
        Some((c, z0)) if (c_lo..=c_hi).contains(&c) && (z_lo..=z_hi).contains(&z0) => {
            problem.cost(c, z0)
        }
        _ => f64::INFINITY,
    };
    // Outside the endpoint box the objective is taken at the projection plus
    // a quadratic distance penalty. Without the penalty the clamped region
    // is flat and the simplex can collapse onto it and report convergence.
    let penalty = problem.n_residuals() as f64;
    let cost = |w: Point| {
        let p = frame.project(w);
        let d2 = (w[0] - p[0]) * (w[0] - p[0]) + (w[1] - p[1]) * (w[1] - p[1]);
        feasible(p) + penalty * d2
    };
    let (c_grid, z0_grid) = map.to_params(u_grid);
    let cell = (frame.hi - frame.lo) / (opts.grid_z0 - 1) as f64;
    let settings = nelder_mead::Settings {
        spread_tol: opts.spread_tol,
        max_iter: opts.max_iter,
    };
    let mut w_best = frame.to_endpoints(c_grid, z0_grid);
    let mut f_best = f_grid;
    let mut iterations = 0;
    let mut converged = false;
    for _ in 0..=MAX_RESTARTS {
        // Fresh simplex stepping away from the nearest curve end.
        let step = [
            if w_best[0] + cell <= frame.hi {
                cell
            } else {
                -cell
            },
            if w_best[1] - cell >= frame.lo {
                -cell
            } else {
                cell
            },
        ];
        let run = nelder_mead::minimize(cost, w_best, f_best, step, settings);
        iterations += run.iterations;
        converged = run.converged;
        let gain = f_best - run.f;
        if run.f <= f_best {
            w_best = run.x;
            f_best = run.f;
        }
        if !(gain > opts.spread_tol) {
            break;
        }
    }

    // Stage 3
    let w_best = frame.project(w_best);
    f_best = feasible(w_best);
    let (capacity, z0) = match frame.to_params(w_best) {
        Some(params) if f_best <= f_grid => params,
        _ => {
            f_best = f_grid;
            (c_grid, z0_grid)
        }
    };
    finish(problem, capacity, z0, f_best, converged, iterations)
}

fn finish(
    problem: &EstimationProblem,
    capacity: f64,
    z0: f64,
    objective: f64,
    converged: bool,
    iterations: usize,
) -> Result<EstimationResult> {
    let n = problem.n_residuals();
    Ok(EstimationResult {
        capacity,
        z0,
        rmse: libm::sqrt(objective / n as f64),
        objective,
        transform: SocTransform::new(problem.nominal_capacity, capacity, z0)?,
        n_residuals: n,
        flatness_indicator: flatness_indicator(problem, capacity, z0),
        converged,
        iterations,
        window: None,
    })
}

/// Normalised smallest eigenvalue of `JᵀJ`, with `J` the finite-difference
/// Jacobian of the residuals in bound-normalised coordinates.
///
/// Differences are taken per sample: central where both perturbed SOCs stay
/// on the curve, one-sided where one of them falls off an end, so a
/// solution touching the curve boundary still gets a meaningful value.
fn flatness_indicator(problem: &EstimationProblem, capacity: f64, z0: f64) -> f64 {
    let map = BoxMap::new(problem);
    let h = problem.options.jacobian_step;
    let dc = h * map.c_width;
    let dz = h * map.z_width;
    let curve = &problem.nominal;
    let model = |c: f64, z: f64, q: f64| {
        if c > 0.0 {
            curve.interp_ocv(z - q / c).ok()
        } else {
            None
        }
    };
    let slope = |up: Option<f64>, base: f64, down: Option<f64>| match (up, down) {
        (Some(u), Some(d)) => (u - d) / (2.0 * h),
        (Some(u), None) => (u - base) / h,
        (None, Some(d)) => (base - d) / h,
        (None, None) => 0.0,
    };

    let (mut a, mut b, mut d) = (0.0, 0.0, 0.0);
    for &q in &problem.q_dc {
        let Some(base) = model(capacity, z0, q) else {
            return 0.0;
        };
        let jc = slope(
            model(capacity + dc, z0, q),
            base,
            model(capacity - dc, z0, q),
        );
        let jz = slope(
            model(capacity, z0 + dz, q),
            base,
            model(capacity, z0 - dz, q),
        );
        a += jc * jc;
        b += jc * jz;
        d += jz * jz;
    }

    let mean = 0.5 * (a + d);
    let radius = libm::sqrt(0.25 * (a - d) * (a - d) + b * b);
    let largest = mean + radius;
    if !(largest > 0.0) {
        return 0.0;
    }
    // Cancellation can push the small eigenvalue a hair below zero; the
    // product form det / largest is the better-conditioned route.
    let smallest = ((a * d - b * b) / largest).max(0.0);
    smallest / largest
}

/// [`estimate`] on samples `[start, end)`; see [`EstimationProblem::window`].
pub fn estimate_window(
    problem: &EstimationProblem,
    window: (usize, usize),
) -> Result<EstimationResult> {
    let (start, end) = window;
    let sub = problem.window(start, end)?;
    let mut result = estimate(&sub)?;
    result.window = Some(window);
    Ok(result)
}

/// Sample indices `[start, end)` covering the fraction `[lo, hi]` of an
/// `n`-sample trace, e.g. `(1/3, 2/3)` for the middle third.
pub fn fraction_window(n: usize, lo: f64, hi: f64) -> (usize, usize) {
    let at = |f: f64| libm::round(f.clamp(0.0, 1.0) * n as f64) as usize;
    (at(lo), at(hi))
}
