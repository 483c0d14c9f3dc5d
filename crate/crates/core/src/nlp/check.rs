use serde::{Deserialize, Serialize};

use super::{Problem, ValueGrad};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    /// Largest relative error over all checked evaluators.
    pub max_rel_error: f64,
    pub worst: Option<String>,
    /// (evaluator, relative error) for every checked evaluator.
    pub errors: Vec<(String, f64)>,
    /// Constraints skipped because |P| has a kink within the stencil.
    pub skipped: Vec<String>,
}

/// ‖a - b‖∞ / max(‖a‖∞, ‖b‖∞), or the absolute error when both vanish. The
/// rounding error of each central difference (`noise`) is discounted first,
/// so functions with a large constant offset are not penalized for it.
fn rel_error(an: &[f64], fd: &[f64], noise: &[f64]) -> f64 {
    let diff = an.iter().zip(fd).zip(noise).fold(0.0f64, |m, ((a, b), n)| m.max(((a - b).abs() - n).max(0.0)));
    let scale = an.iter().chain(fd).fold(0.0f64, |m, v| m.max(v.abs()));
    if scale > 1e-12 {
        diff / scale
    } else {
        diff
    }
}

/// Rounding bound of a central difference of values `fp`, `fm` with step `h`.
/// Values are taken to carry rounding of at least unit magnitude, since
/// constraints are offsets of O(1) sample averages.
fn fd_noise(fp: f64, fm: f64, h: f64) -> f64 {
    8.0 * f64::EPSILON * fp.abs().max(fm.abs()).max(1.0) / (2.0 * h)
}

/// Compares analytic gradients of the objective, every constraint and the
/// problem's auxiliary terms with central differences. The step in
/// coordinate i is `step · max(1, upper_i - lower_i)`.
pub fn grad_check<P: Problem>(problem: &P, x: &[f64], step: f64) -> GradCheck {
    let n = problem.dim();
    let steps: Vec<f64> = (0..n).map(|i| step * (problem.upper()[i] - problem.lower()[i]).max(1.0)).collect();
    let base = problem.evaluate(x);
    let aux = problem.auxiliary_terms(x);
    let m = problem.num_constraints();

    // values of every checked function at x ± h e_i
    let mut fd_obj = vec![0.0; n];
    let mut fd_con = vec![vec![0.0; n]; m];
    let mut fd_aux = vec![vec![0.0; n]; aux.len()];
    let mut noise_obj = vec![0.0; n];
    let mut noise_con = vec![vec![0.0; n]; m];
    let mut noise_aux = vec![vec![0.0; n]; aux.len()];
    for i in 0..n {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[i] += steps[i];
        xm[i] -= steps[i];
        let (ep, em) = (problem.evaluate(&xp), problem.evaluate(&xm));
        let h2 = 2.0 * steps[i];
        fd_obj[i] = (ep.objective - em.objective) / h2;
        noise_obj[i] = fd_noise(ep.objective, em.objective, steps[i]);
        for c in 0..m {
            fd_con[c][i] = (ep.constraints[c] - em.constraints[c]) / h2;
            noise_con[c][i] = fd_noise(ep.constraints[c], em.constraints[c], steps[i]);
        }
        let (ap, am) = (problem.auxiliary_terms(&xp), problem.auxiliary_terms(&xm));
        for k in 0..aux.len() {
            fd_aux[k][i] = (ap[k].1.value - am[k].1.value) / h2;
            noise_aux[k][i] = fd_noise(ap[k].1.value, am[k].1.value, steps[i]);
        }
    }

    let names = problem.constraint_names();
    let kinked = problem.kinked_constraints(x, &steps);
    let mut errors = vec![("objective".to_string(), rel_error(&base.gradient, &fd_obj, &noise_obj))];
    let mut skipped = Vec::new();
    for c in 0..m {
        if kinked.contains(&c) {
            skipped.push(names[c].clone());
        } else {
            errors.push((names[c].clone(), rel_error(&base.jacobian[c], &fd_con[c], &noise_con[c])));
        }
    }
    for (k, (name, ValueGrad { gradient, .. })) in aux.iter().enumerate() {
        errors.push((name.clone(), rel_error(gradient, &fd_aux[k], &noise_aux[k])));
    }
    let (worst, max_rel_error) =
        errors.iter().fold((None, 0.0f64), |(w, m), (name, e)| if *e > m { (Some(name.clone()), *e) } else { (w, m) });
    GradCheck { max_rel_error, worst, errors, skipped }
}
