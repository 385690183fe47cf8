//! Central finite-difference verification of analytic gradients.

use super::graph::{Graph, Var};
use super::params::ParamStore;
use crate::{Error, Result};

/// Denominator floor for [`relative_error`]. Gradient entries smaller than
/// this are compared in absolute terms, since central differences with
/// `h = 1e-5` carry roughly `1e-10` of round-off.
pub const RELATIVE_FLOOR: f64 = 1e-5;

/// `|a - n| / max(|a|, |n|, RELATIVE_FLOOR)`, defined as 0 when both are 0.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    if analytic == numeric {
        return 0.0;
    }
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub checked: usize,
    /// Parameter name, flat entry index, analytic and numeric value of the
    /// worst entry.
    pub worst: Option<(String, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }

    fn record(&mut self, name: &str, entry: usize, analytic: f64, numeric: f64) {
        let err = relative_error(analytic, numeric);
        self.checked += 1;
        if err > self.max_rel_error || self.worst.is_none() {
            self.max_rel_error = self.max_rel_error.max(err);
            self.worst = Some((name.to_string(), entry, analytic, numeric));
        }
    }
}

fn check_step(h: f64) -> Result<()> {
    if !(1e-6..=1e-3).contains(&h) {
        return Err(Error::Config(format!("finite-difference step {h} outside [1e-6, 1e-3]")));
    }
    Ok(())
}

fn finite(v: f64, what: &str) -> Result<f64> {
    if v.is_nan() {
        return Err(Error::Numeric(format!("{what} returned NaN")));
    }
    Ok(v)
}

/// Compares `analytic` against central differences of a plain function.
pub fn check_function(
    f: impl Fn(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    h: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    check_step(h)?;
    if analytic.len() != x.len() {
        return Err(Error::Config("analytic gradient length differs from input".into()));
    }
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        tolerance: tol,
        checked: 0,
        worst: None,
    };
    let mut probe = x.to_vec();
    for k in 0..x.len() {
        probe[k] = x[k] + h;
        let plus = finite(f(&probe), "function")?;
        probe[k] = x[k] - h;
        let minus = finite(f(&probe), "function")?;
        probe[k] = x[k];
        report.record("x", k, analytic[k], (plus - minus) / (2.0 * h));
    }
    Ok(report)
}

/// Checks every entry of every parameter in `store`.
///
/// `build` records the scalar loss on a fresh graph; it is called once for
/// the analytic pass and twice per parameter entry for the numeric pass.
pub fn finite_difference_check<F>(
    store: &ParamStore,
    h: f64,
    tol: f64,
    build: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_>) -> Result<Var>,
{
    check_step(h)?;
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut g = Graph::new(s);
        let loss = build(&mut g)?;
        finite(g.scalar_value(loss), "loss")
    };

    let analytic = {
        let mut g = Graph::new(store);
        let loss = build(&mut g)?;
        finite(g.scalar_value(loss), "loss")?;
        g.backward(loss)?
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        tolerance: tol,
        checked: 0,
        worst: None,
    };
    let mut probe = store.clone();
    for id in store.ids() {
        let n = store.value(id).len();
        let grad = analytic.get(id);
        for k in 0..n {
            let orig = store.value(id).data()[k];
            probe.value_mut(id).data_mut()[k] = orig + h;
            let plus = eval(&probe)?;
            probe.value_mut(id).data_mut()[k] = orig - h;
            let minus = eval(&probe)?;
            probe.value_mut(id).data_mut()[k] = orig;
            let a = grad.map_or(0.0, |g| g[k]);
            report.record(store.name(id), k, a, (plus - minus) / (2.0 * h));
        }
    }
    Ok(report)
}
