//! Synthetic aged-cell traces with known ground truth.
//!
//! The aged cell's OCV is read off the nominal curve at its *calibrated*
//! SOC, so a noise-free trace satisfies the alignment model exactly and the
//! true `(capacity, z0)` is a zero of the estimator's objective.

use alloc::string::String;
use alloc::vec::Vec;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::coulomb::DischargeTrace;
use crate::curve::OcvCurve;
use crate::error::{Error, Result};

/// Identifies the noise generator: ChaCha8 seeded through
/// `SeedableRng::seed_from_u64`, with standard-normal draws from
/// `rand_distr` 0.5 (ziggurat) scaled by sigma. Same seed and sample count
/// give bit-identical noise.
pub const NOISE_GENERATOR: &str = "chacha8/seed_from_u64+rand_distr-0.5-normal";

/// Nominal capacity of the cell the reference curve is modelled on, Ah.
pub const REFERENCE_NOMINAL_CAPACITY_AH: f64 = 4.85;

/// 41 knots, SOC 0, 0.025, …, 1.
///
/// Generated once from `0.55 z + 0.9 σ((z - 0.03) / 0.035) + 0.18 σ((z - 0.78) / 0.07)`
/// (σ the logistic function), affinely rescaled onto 2.5–4.2 V and rounded
/// to 0.1 mV. Steep knee below 10 % SOC, a low-slope middle (about
/// 0.70 V per unit SOC over 0.3–0.5) and a second rise above 70 %.
const REFERENCE_OCV_V: [f64; 41] = [
    2.5000, 2.7052, 2.9199, 3.1002, 3.2275, 3.3092, 3.3612, 3.3963, 3.4225, 3.4442, 3.4637, 3.4821,
    3.4999, 3.5175, 3.5351, 3.5526, 3.5702, 3.5879, 3.6057, 3.6238, 3.6423, 3.6613, 3.6809, 3.7015,
    3.7233, 3.7468, 3.7723, 3.8003, 3.8309, 3.8643, 3.9000, 3.9370, 3.9743, 4.0107, 4.0450, 4.0768,
    4.1058, 4.1323, 4.1565, 4.1790, 4.2000,
];

/// Built-in NMC-like reference curve spanning 2.5 V to 4.2 V.
pub fn reference_nominal_curve() -> OcvCurve {
    let n = REFERENCE_OCV_V.len();
    let soc = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
    OcvCurve::new(soc, REFERENCE_OCV_V.to_vec(), "reference NMC-like")
        .expect("reference curve table is strictly increasing")
}

/// Load current applied during a synthetic discharge. Positive charges.
#[derive(Debug, Clone, PartialEq)]
pub enum CurrentProgram {
    Constant(f64),
    /// `(start_s, amperes)` steps, the first starting at 0 s. Each holds
    /// until the next start; the last holds indefinitely and must discharge.
    Steps(Vec<(f64, f64)>),
}

impl CurrentProgram {
    fn validate(&self) -> Result<()> {
        match self {
            Self::Constant(i) => {
                if !(*i < 0.0) || !i.is_finite() {
                    return Err(Error::InvalidScenario(
                        "constant current must be negative (discharging)",
                    ));
                }
            }
            Self::Steps(steps) => {
                let Some(&(t0, _)) = steps.first() else {
                    return Err(Error::InvalidScenario("current program has no steps"));
                };
                if t0 != 0.0 {
                    return Err(Error::InvalidScenario(
                        "first current step must start at 0 s",
                    ));
                }
                if steps.iter().any(|(t, i)| !t.is_finite() || !i.is_finite()) {
                    return Err(Error::InvalidScenario(
                        "current program values must be finite",
                    ));
                }
                if steps.windows(2).any(|w| w[1].0 <= w[0].0) {
                    return Err(Error::InvalidScenario(
                        "current step start times must increase",
                    ));
                }
                if !(steps[steps.len() - 1].1 < 0.0) {
                    return Err(Error::InvalidScenario("final current step must discharge"));
                }
            }
        }
        Ok(())
    }

    /// Current at `t`; at a step boundary the new step applies.
    fn current_at(&self, t: f64) -> f64 {
        match self {
            Self::Constant(i) => *i,
            Self::Steps(steps) => {
                let idx = steps.partition_point(|(start, _)| *start <= t).max(1) - 1;
                steps[idx].1
            }
        }
    }

    /// Exact `-∫_0^t i dτ` in ampere-seconds.
    fn withdrawn_as(&self, t: f64) -> f64 {
        match self {
            Self::Constant(i) => -i * t,
            Self::Steps(steps) => {
                let mut charge = 0.0;
                for (k, &(start, i)) in steps.iter().enumerate() {
                    if start >= t {
                        break;
                    }
                    let end = steps.get(k + 1).map_or(t, |s| s.0.min(t));
                    charge -= i * (end - start);
                }
                charge
            }
        }
    }

    /// Earliest time at which `withdrawn_as` reaches `target_as`, if the
    /// program ever gets there. The last step discharges, so it always does.
    fn time_to_withdraw(&self, target_as: f64) -> f64 {
        match self {
            Self::Constant(i) => target_as / -i,
            Self::Steps(steps) => {
                let mut charge = 0.0;
                for (k, &(start, i)) in steps.iter().enumerate() {
                    let next = steps.get(k + 1).map(|s| s.0);
                    if i < 0.0 {
                        let t_hit = start + (target_as - charge) / -i;
                        if next.is_none_or(|end| t_hit <= end) {
                            return t_hit;
                        }
                    }
                    if let Some(end) = next {
                        charge -= i * (end - start);
                    }
                }
                unreachable!("validated: final step discharges")
            }
        }
    }
}

/// Ground truth and sampling plan for one synthetic discharge.
#[derive(Debug, Clone, PartialEq)]
pub struct AgingScenario {
    pub nominal: OcvCurve,
    /// True (calibrated) capacity, Ah.
    pub true_capacity: f64,
    /// True SOC at t = 0.
    pub true_z0: f64,
    pub current: CurrentProgram,
    /// Standard deviation of additive OCV noise, V.
    pub ocv_noise_sigma: f64,
    pub sample_period: f64,
    pub seed: u64,
    /// Discharge stops when the calibrated SOC reaches this value.
    pub soc_stop: f64,
}

impl AgingScenario {
    /// Constant-current discharge at `C_true / 20` sampled every 60 s, no
    /// noise, on the built-in reference curve.
    pub fn new(true_capacity: f64, true_z0: f64, soc_stop: f64) -> Self {
        Self {
            nominal: reference_nominal_curve(),
            true_capacity,
            true_z0,
            current: CurrentProgram::Constant(-true_capacity / 20.0),
            ocv_noise_sigma: 0.0,
            sample_period: 60.0,
            seed: 0,
            soc_stop,
        }
    }

    pub fn with_noise(mut self, sigma: f64, seed: u64) -> Self {
        self.ocv_noise_sigma = sigma;
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.true_capacity > 0.0) || !self.true_capacity.is_finite() {
            return Err(Error::InvalidScenario("true capacity must be positive"));
        }
        if !(0.0 <= self.soc_stop && self.soc_stop < self.true_z0 && self.true_z0 <= 1.0) {
            return Err(Error::InvalidScenario("need 0 <= soc_stop < true_z0 <= 1"));
        }
        if !(self.ocv_noise_sigma >= 0.0) || !self.ocv_noise_sigma.is_finite() {
            return Err(Error::InvalidScenario("noise sigma must be non-negative"));
        }
        if !(self.sample_period > 0.0) || !self.sample_period.is_finite() {
            return Err(Error::InvalidScenario("sample period must be positive"));
        }
        self.current.validate()
    }

    /// Human-readable summary, used as a trace label.
    pub fn describe(&self) -> String {
        alloc::format!(
            "C={} Ah z0={} stop={} sigma={} V seed={}",
            self.true_capacity,
            self.true_z0,
            self.soc_stop,
            self.ocv_noise_sigma,
            self.seed
        )
    }
}

/// Simulates the aged-cell discharge described by `scenario`.
///
/// Samples land every `sample_period` seconds from t = 0 plus one final
/// sample at the instant the calibrated SOC reaches `soc_stop`. Discharge
/// capacity is integrated in closed form; for a constant current the final
/// value is exactly `(true_z0 - soc_stop) * true_capacity`.
pub fn generate(scenario: &AgingScenario) -> Result<DischargeTrace> {
    scenario.validate()?;
    let capacity = scenario.true_capacity;
    let stop_as = (scenario.true_z0 - scenario.soc_stop) * capacity * 3600.0;
    let t_stop = scenario.current.time_to_withdraw(stop_as);

    let noise = Normal::new(0.0, scenario.ocv_noise_sigma)
        .map_err(|_| Error::InvalidScenario("noise sigma must be non-negative"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);

    let mut time_s = Vec::new();
    let mut current_a = Vec::new();
    let mut ocv_v = Vec::new();
    let mut q_dc = Vec::new();

    let mut k = 0u64;
    loop {
        let t = k as f64 * scenario.sample_period;
        // A regular sample within rounding of the stop instant becomes the stop.
        let last = t >= t_stop - 1e-9 * scenario.sample_period;
        let (t, q) = if last {
            (t_stop, (scenario.true_z0 - scenario.soc_stop) * capacity)
        } else {
            (t, scenario.current.withdrawn_as(t) / 3600.0)
        };
        let z = if k == 0 {
            scenario.true_z0
        } else if last {
            scenario.soc_stop
        } else {
            scenario.true_z0 - q / capacity
        };
        let v = scenario
            .nominal
            .interp_ocv(z)
            .map_err(|_| Error::RangeExceeded { soc: z, time_s: t })?;
        let v = if scenario.ocv_noise_sigma > 0.0 {
            v + noise.sample(&mut rng)
        } else {
            v
        };
        time_s.push(t);
        current_a.push(scenario.current.current_at(t));
        ocv_v.push(v);
        q_dc.push(if k == 0 { 0.0 } else { q });
        if last {
            break;
        }
        k += 1;
    }

    Ok(DischargeTrace::from_parts(
        time_s,
        current_a,
        Some(ocv_v),
        q_dc,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use approx::assert_relative_eq;

    #[test]
    fn reference_curve_shape() {
        let c = reference_nominal_curve();
        assert_eq!(c.len(), 41);
        assert_eq!((c.soc()[0], c.ocv()[0]), (0.0, 2.5));
        assert_eq!((c.soc()[40], c.ocv()[40]), (1.0, 4.2));
        assert!(c.ocv().windows(2).all(|w| w[1] > w[0]));
        // Smallest knot-to-knot slope inside [0.3, 0.7], read off the table:
        // (3.5351 - 3.5175) / 0.025 = 0.704, (3.5526 - 3.5351) / 0.025 = 0.700.
        let min_mid = (12..28)
            .map(|i| (c.ocv()[i + 1] - c.ocv()[i]) / (c.soc()[i + 1] - c.soc()[i]))
            .fold(f64::INFINITY, f64::min);
        assert_relative_eq!(min_mid, 0.700, max_relative = 1e-9);
        assert!(min_mid > 0.2);
    }

    #[test]
    fn identity_aging_samples_the_curve() {
        let c = reference_nominal_curve();
        let mut s = AgingScenario::new(4.85, 1.0, 0.0);
        // 0.025 SOC per sample: 4.85 Ah * 0.025 * 3600 s / (4.85 / 20 A) = 1800 s
        s.sample_period = 1800.0;
        let trace = generate(&s).unwrap();
        assert_eq!(trace.len(), 41);
        for (k, v) in trace.ocv_v().unwrap().iter().enumerate() {
            assert_relative_eq!(*v, c.ocv()[40 - k], max_relative = 1e-12);
        }
    }

    #[test]
    fn final_discharge_capacity_is_exact() {
        let s = AgingScenario::new(4.1, 0.93, 0.12);
        let trace = generate(&s).unwrap();
        assert_eq!(*trace.q_dc().last().unwrap(), (0.93 - 0.12) * 4.1);
        assert_eq!(trace.q_dc()[0], 0.0);
        assert!(trace.time_s().windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn same_seed_same_trace() {
        let s = AgingScenario::new(4.0, 0.9, 0.1).with_noise(0.005, 42);
        assert_eq!(generate(&s).unwrap(), generate(&s).unwrap());
        let other = AgingScenario {
            seed: 43,
            ..s.clone()
        };
        assert_ne!(generate(&s).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn step_program_integrates_exactly() {
        let mut s = AgingScenario::new(4.0, 1.0, 0.5);
        s.current = CurrentProgram::Steps(vec![(0.0, -2.0), (1800.0, 1.0), (2400.0, -4.0)]);
        s.sample_period = 300.0;
        let trace = generate(&s).unwrap();
        // 1800 s at 2 A out, 600 s at 1 A in: 1.0 - 1/6 = 0.8333 Ah at 2400 s.
        let at_2400 = trace.time_s().iter().position(|&t| t == 2400.0).unwrap();
        assert_relative_eq!(
            trace.q_dc()[at_2400],
            1.0 - 600.0 / 3600.0,
            max_relative = 1e-14
        );
        assert_eq!(*trace.q_dc().last().unwrap(), 0.5 * 4.0);
        // remaining 2 - 5/6 Ah at 4 A
        assert_relative_eq!(
            *trace.time_s().last().unwrap(),
            2400.0 + (2.0 - 5.0 / 6.0) * 3600.0 / 4.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn leaving_curve_range_is_reported() {
        let mut s = AgingScenario::new(4.0, 0.95, 0.5);
        // charging past full before the discharge step
        s.current = CurrentProgram::Steps(vec![(0.0, 4.0), (3600.0, -4.0)]);
        s.sample_period = 600.0;
        assert!(matches!(generate(&s), Err(Error::RangeExceeded { .. })));
    }

    #[test]
    fn invalid_scenarios() {
        let base = AgingScenario::new(4.0, 0.9, 0.1);
        assert!(AgingScenario {
            true_capacity: 0.0,
            ..base.clone()
        }
        .validate()
        .is_err());
        assert!(AgingScenario {
            soc_stop: 0.95,
            ..base.clone()
        }
        .validate()
        .is_err());
        assert!(AgingScenario {
            ocv_noise_sigma: -1.0,
            ..base.clone()
        }
        .validate()
        .is_err());
        assert!(AgingScenario {
            sample_period: 0.0,
            ..base.clone()
        }
        .validate()
        .is_err());
        assert!(AgingScenario {
            current: CurrentProgram::Constant(1.0),
            ..base.clone()
        }
        .validate()
        .is_err());
        assert!(AgingScenario {
            current: CurrentProgram::Steps(vec![(0.0, -1.0), (10.0, 1.0)]),
            ..base
        }
        .validate()
        .is_err());
    }
}
