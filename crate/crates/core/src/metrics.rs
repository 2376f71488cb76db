//! Scoring of capacity estimates and curve alignment.

use alloc::string::String;
use alloc::vec::Vec;

use crate::curve::OcvCurve;
use crate::error::{Error, Result};

/// `100 * |estimated - actual| / actual`, in percent.
pub fn absolute_relative_error(estimated: f64, actual: f64) -> Result<f64> {
    if !(actual > 0.0) {
        return Err(Error::NonPositiveActual(actual));
    }
    Ok(100.0 * (estimated - actual).abs() / actual)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentRmse {
    /// Volts.
    pub rmse: f64,
    pub included: usize,
    /// Points whose SOC fell outside the nominal curve.
    pub excluded: usize,
}

/// RMS distance between aged OCV samples placed at `transformed_soc` and
/// the nominal curve. Points outside the curve's SOC range are skipped and
/// counted.
pub fn curve_alignment_rmse(
    nominal: &OcvCurve,
    transformed_soc: &[f64],
    v_oc: &[f64],
) -> Result<AlignmentRmse> {
    if transformed_soc.len() != v_oc.len() {
        return Err(Error::LengthMismatch {
            left: transformed_soc.len(),
            right: v_oc.len(),
        });
    }
    let mut sum = 0.0;
    let mut included = 0;
    for (z, v) in transformed_soc.iter().zip(v_oc) {
        if let Ok(model) = nominal.interp_ocv(*z) {
            sum += (v - model) * (v - model);
            included += 1;
        }
    }
    if included == 0 {
        return Err(Error::NoIncludedPoints);
    }
    Ok(AlignmentRmse {
        rmse: libm::sqrt(sum / included as f64),
        included,
        excluded: v_oc.len() - included,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CycleRow {
    pub cycle_id: String,
    pub estimated_ah: f64,
    pub actual_ah: f64,
    pub are_percent: f64,
}

/// Per-cycle estimates against ground truth plus aggregates over all rows.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub per_cycle: Vec<CycleRow>,
    pub rmse_ah: f64,
    pub mae_ah: f64,
    pub mean_are_percent: f64,
}

/// Builds a report from `(cycle_id, estimated_ah, actual_ah)` rows.
pub fn aggregate<I, S>(rows: I) -> Result<EvaluationReport>
where
    I: IntoIterator<Item = (S, f64, f64)>,
    S: Into<String>,
{
    let mut per_cycle = Vec::new();
    let (mut sq, mut abs, mut are) = (0.0, 0.0, 0.0);
    for (id, estimated_ah, actual_ah) in rows {
        let are_percent = absolute_relative_error(estimated_ah, actual_ah)?;
        let err = estimated_ah - actual_ah;
        sq += err * err;
        abs += err.abs();
        are += are_percent;
        per_cycle.push(CycleRow {
            cycle_id: id.into(),
            estimated_ah,
            actual_ah,
            are_percent,
        });
    }
    if per_cycle.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = per_cycle.len() as f64;
    Ok(EvaluationReport {
        per_cycle,
        rmse_ah: libm::sqrt(sq / n),
        mae_ah: abs / n,
        mean_are_percent: are / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use approx::assert_relative_eq;

    #[test]
    fn are_examples() {
        // Rounded table entries: 100 * 0.0005 / 4.6285 = 0.010802...
        assert_relative_eq!(
            absolute_relative_error(4.6280, 4.6285).unwrap(),
            0.010_802_635_843_145_7,
            max_relative = 1e-9
        );
        assert_eq!(absolute_relative_error(3.3, 3.3).unwrap(), 0.0);
        // 100 * 0.0201 / 4.4505 = 0.451634...
        assert_relative_eq!(
            absolute_relative_error(4.4706, 4.4505).unwrap(),
            0.451_634_647_792_383,
            max_relative = 1e-9
        );
        assert_eq!(
            absolute_relative_error(1.0, 0.0),
            Err(Error::NonPositiveActual(0.0))
        );
    }

    #[test]
    fn aggregate_examples() {
        let r = aggregate([("a", 4.0, 4.2)]).unwrap();
        assert_relative_eq!(r.rmse_ah, 0.2, max_relative = 1e-12);
        assert_relative_eq!(r.mae_ah, 0.2, max_relative = 1e-12);

        let r = aggregate([("a", 4.1, 4.0), ("b", 3.9, 4.0)]).unwrap();
        assert_relative_eq!(r.mae_ah, 0.1, max_relative = 1e-12);
        assert_relative_eq!(r.rmse_ah, 0.1, max_relative = 1e-12);
        assert_eq!(r.per_cycle[1].cycle_id, "b");

        let empty: Vec<(String, f64, f64)> = vec![];
        assert_eq!(aggregate(empty), Err(Error::EmptyInput));
    }

    #[test]
    fn alignment_rmse_counts_exclusions() {
        let c = OcvCurve::new(vec![0.0, 1.0], vec![3.0, 4.0], "").unwrap();
        let r = curve_alignment_rmse(&c, &[0.5, 1.5, 0.25], &[3.5, 9.0, 3.35]).unwrap();
        assert_eq!((r.included, r.excluded), (2, 1));
        // residuals 0 and 0.1
        assert_relative_eq!(r.rmse, libm::sqrt(0.01 / 2.0), max_relative = 1e-12);
        assert_eq!(
            curve_alignment_rmse(&c, &[2.0], &[3.0]),
            Err(Error::NoIncludedPoints)
        );
    }
}
