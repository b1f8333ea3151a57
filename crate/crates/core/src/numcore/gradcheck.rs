//! Central-difference verification of analytic gradients.

use std::collections::BTreeMap;

use super::{Graph, NodeId, ParamSet};
use crate::error::{Error, Result};

/// Denominator floor for relative errors; gradients smaller than this are
/// effectively compared in absolute terms.
pub const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GroupReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Entries sitting on a kink (ReLU at 0, |z| at 0) where the central
    /// difference straddles two one-sided slopes.
    pub skipped: usize,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub groups: BTreeMap<String, GroupReport>,
}

impl GradCheckReport {
    pub fn worst(&self) -> f64 {
        self.groups.values().map(|g| g.max_rel_error).fold(0.0, f64::max)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Hook applied to analytic gradients before comparison (negative controls).
pub type GradientTamper<'a> = &'a dyn Fn(&mut ParamSet);

/// Compares analytic gradients of the scalar `forward` against
/// `(f(v+h) − f(v−h)) / 2h` for every parameter entry.
pub fn finite_difference_check<F>(params: &ParamSet, forward: F, step: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_>) -> Result<NodeId>,
{
    finite_difference_check_with(params, forward, step, None)
}

pub fn finite_difference_check_with<F>(
    params: &ParamSet,
    forward: F,
    step: f64,
    tamper: Option<GradientTamper<'_>>,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_>) -> Result<NodeId>,
{
    if step <= 0.0 || !step.is_finite() {
        return Err(Error::Contract(format!("finite-difference step must be > 0, got {step}")));
    }
    let eval = |ps: &ParamSet| -> Result<f64> {
        let mut g = Graph::new(ps);
        let out = forward(&mut g)?;
        let v = g.value(out);
        if v.len() != 1 {
            return Err(Error::Contract(format!(
                "gradient check needs a scalar output, got shape {:?}",
                v.shape()
            )));
        }
        Ok(v.data()[0])
    };

    let mut analytic = params.clone();
    analytic.zero_grads();
    {
        let mut g = Graph::new(params);
        let out = forward(&mut g)?;
        let grads = g.backward(out)?;
        analytic.accumulate(&grads);
    }
    if let Some(t) = tamper {
        t(&mut analytic);
    }

    let f0 = eval(params)?;
    let mut work = params.clone();
    let mut report = GradCheckReport::default();
    for (id, p) in params.iter() {
        let mut group = GroupReport::default();
        let grad = analytic.get(id).grad.data().to_vec();
        for (i, &a) in grad.iter().enumerate() {
            let orig = p.value.data()[i];
            work.get_mut(id).value.data_mut()[i] = orig + step;
            let fp = eval(&work)?;
            work.get_mut(id).value.data_mut()[i] = orig - step;
            let fm = eval(&work)?;
            work.get_mut(id).value.data_mut()[i] = orig;

            let numeric = (fp - fm) / (2.0 * step);
            let err = relative_error(a, numeric);
            if err > 1e-7 {
                let right = (fp - f0) / step;
                let left = (f0 - fm) / step;
                if (right - left).abs() >= (numeric - a).abs() {
                    group.skipped += 1;
                    continue;
                }
            }
            group.checked += 1;
            group.max_rel_error = group.max_rel_error.max(err);
        }
        report.groups.insert(p.name.clone(), group);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::RealArray;

    #[test]
    fn quadratic_is_exact() {
        let mut ps = ParamSet::new();
        let id = ps
            .add("w", RealArray::from_vec(&[3], vec![0.3, -1.2, 2.0]).unwrap())
            .unwrap();
        let report = finite_difference_check(
            &ps,
            |g| {
                let p = g.param(id);
                let s = g.square(p)?;
                g.mean(s)
            },
            1e-5,
        )
        .unwrap();
        assert!(report.groups["w"].max_rel_error < 1e-9, "{report:?}");
        assert_eq!(report.groups["w"].checked, 3);
    }

    #[test]
    fn relu_kink_is_skipped() {
        let mut ps = ParamSet::new();
        let id = ps.add("p", RealArray::from_vec(&[1], vec![0.0]).unwrap()).unwrap();
        let report = finite_difference_check(
            &ps,
            |g| {
                let p = g.param(id);
                let r = g.relu(p)?;
                g.mean(r)
            },
            1e-6,
        )
        .unwrap();
        assert_eq!(report.groups["p"].skipped, 1);
        assert_eq!(report.groups["p"].checked, 0);
        assert_eq!(report.groups["p"].max_rel_error, 0.0);
    }

    #[test]
    fn tampered_gradient_is_detected() {
        let mut ps = ParamSet::new();
        let id = ps.add("w", RealArray::from_vec(&[2], vec![0.5, 1.5]).unwrap()).unwrap();
        let tamper = |p: &mut ParamSet| p.get_mut(id).grad.data_mut()[0] += 0.01;
        let report = finite_difference_check_with(
            &ps,
            |g| {
                let p = g.param(id);
                let s = g.square(p)?;
                g.mean(s)
            },
            1e-5,
            Some(&tamper),
        )
        .unwrap();
        assert!(report.groups["w"].max_rel_error > 1e-3);
    }

    #[test]
    fn rejects_nonpositive_step() {
        let ps = ParamSet::new();
        assert!(finite_difference_check(&ps, |g| g.input(RealArray::scalar(0.0)), 0.0).is_err());
    }
}
