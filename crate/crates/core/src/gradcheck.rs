//! Central-difference gradient oracle.

use crate::params::ParamStore;

/// Relative error used by [`finite_difference_check`].
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Parameter name and element index of the worst element.
    pub worst: Option<(String, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Compares the gradients held in `store` against `(loss(θ+h) − loss(θ−h)) / 2h`
/// for every parameter element and returns the worst relative error.
///
/// `loss_fn` must be deterministic. Parameter values are restored afterwards.
pub fn finite_difference_check<F>(loss_fn: F, store: &mut ParamStore, h: f64) -> f64
where
    F: FnMut(&ParamStore) -> f64,
{
    finite_difference_report(loss_fn, store, h).max_relative_error
}

pub fn finite_difference_report<F>(loss_fn: F, store: &mut ParamStore, h: f64) -> GradCheckReport
where
    F: FnMut(&ParamStore) -> f64,
{
    report_with(loss_fn, store, h, Stencil::Central)
}

/// Like [`finite_difference_report`] with the fourth-order stencil
/// `(8(f(θ+h) − f(θ−h)) − (f(θ+2h) − f(θ−2h))) / 12h`, which tolerates a larger
/// `h` and so keeps rounding noise well below tiny gradients.
pub fn five_point_report<F>(loss_fn: F, store: &mut ParamStore, h: f64) -> GradCheckReport
where
    F: FnMut(&ParamStore) -> f64,
{
    report_with(loss_fn, store, h, Stencil::FivePoint)
}

#[derive(Clone, Copy)]
enum Stencil {
    Central,
    FivePoint,
}

fn report_with<F>(mut loss_fn: F, store: &mut ParamStore, h: f64, stencil: Stencil) -> GradCheckReport
where
    F: FnMut(&ParamStore) -> f64,
{
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    for pi in 0..store.len() {
        let id = crate::params::ParamId(pi);
        for i in 0..store.get(id).value.len() {
            let original = store.get(id).value.data()[i];
            let mut at = |offset: f64, store: &mut ParamStore| {
                store.get_mut(id).value.data_mut()[i] = original + offset;
                loss_fn(store)
            };
            let numeric = match stencil {
                Stencil::Central => (at(h, store) - at(-h, store)) / (2.0 * h),
                Stencil::FivePoint => {
                    let near = at(h, store) - at(-h, store);
                    let far = at(2.0 * h, store) - at(-2.0 * h, store);
                    (8.0 * near - far) / (12.0 * h)
                }
            };
            store.get_mut(id).value.data_mut()[i] = original;

            let analytic = store.get(id).grad.data()[i];
            let err = relative_error(analytic, numeric);
            report.checked += 1;
            if err > report.max_relative_error || report.worst.is_none() {
                report.max_relative_error = err;
                report.worst = Some((store.get(id).name.clone(), i));
                report.analytic = analytic;
                report.numeric = numeric;
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Init;

    #[test]
    fn quadratic_is_exact() {
        let mut store = ParamStore::new(0);
        let id = store.register("theta", &[1], Init::Zeros).unwrap();
        store.get_mut(id).value.data_mut()[0] = 3.0;
        store.get_mut(id).grad.data_mut()[0] = 3.0;
        let err = finite_difference_check(|s| 0.5 * s.value(id)[0].powi(2), &mut store, 1e-5);
        assert!(err < 1e-8, "{err}");
        assert_eq!(store.value(id)[0], 3.0);
    }

    #[test]
    fn constant_loss_has_zero_error() {
        let mut store = ParamStore::new(0);
        store.register("theta", &[3], Init::Uniform(1.0)).unwrap();
        assert_eq!(finite_difference_check(|_| 4.2, &mut store, 1e-5), 0.0);
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let mut store = ParamStore::new(0);
        let id = store.register("theta", &[1], Init::Zeros).unwrap();
        store.get_mut(id).value.data_mut()[0] = 2.0;
        store.get_mut(id).grad.data_mut()[0] = 1.0;
        let err = finite_difference_check(|s| s.value(id)[0].powi(2), &mut store, 1e-5);
        assert!(err > 0.5);
    }

    #[test]
    fn five_point_is_exact_for_quartics() {
        let mut store = ParamStore::new(0);
        let id = store.register("theta", &[1], Init::Zeros).unwrap();
        store.get_mut(id).value.data_mut()[0] = 0.7;
        store.get_mut(id).grad.data_mut()[0] = 4.0 * 0.7f64.powi(3);
        let r = five_point_report(|s| s.value(id)[0].powi(4), &mut store, 1e-2);
        assert!(r.max_relative_error < 1e-12, "{r:?}");
        assert_eq!(store.value(id)[0], 0.7);
    }
}
