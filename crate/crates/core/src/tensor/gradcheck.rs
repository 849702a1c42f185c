//! Central finite-difference gradient checking.

use rayon::prelude::*;

use super::{ParamId, ParamStore};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// Largest `|analytic - central| / (|analytic| + |central| + 1e-8)`.
    pub max_relative_error: f64,
    /// Parameter name and flat index where it occurred.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// Compares the gradients stored in `analytic` with central differences of
/// `loss` around the values in `store`. `loss` must only run the forward pass.
/// Entries are probed in parallel; the result does not depend on scheduling.
pub fn check_gradients<F>(store: &ParamStore, analytic: &ParamStore, h: f64, loss: F) -> GradCheck
where
    F: Fn(&ParamStore) -> f64 + Sync,
{
    let entries: Vec<(ParamId, usize)> = store
        .ids()
        .flat_map(|id| (0..store.get(id).numel()).map(move |i| (id, i)))
        .collect();
    let verbose = std::env::var_os("GRADCHECK_VERBOSE").is_some();
    let errors: Vec<f64> = entries
        .par_iter()
        .map_init(
            || store.clone(),
            |probe, &(id, i)| {
                let orig = probe.get(id).data()[i];
                probe.get_mut(id).data_mut()[i] = orig + h;
                let up = loss(probe);
                probe.get_mut(id).data_mut()[i] = orig - h;
                let down = loss(probe);
                probe.get_mut(id).data_mut()[i] = orig;
                let fd = (up - down) / (2.0 * h);
                let a = analytic.get(id).grad().expect("analytic gradient")[i];
                let rel = (a - fd).abs() / (a.abs() + fd.abs() + 1e-8);
                if verbose && rel > 1e-4 {
                    eprintln!("{} [{i}]: analytic {a} fd {fd} rel {rel}", store.name(id));
                }
                rel
            },
        )
        .collect();
    let mut result = GradCheck {
        max_relative_error: 0.0,
        worst: None,
        checked: entries.len(),
    };
    for (&(id, i), &e) in entries.iter().zip(&errors) {
        if e > result.max_relative_error || e.is_nan() {
            result.max_relative_error = e;
            result.worst = Some((store.name(id).to_string(), i));
        }
    }
    result
}
