use super::tape::{Tape, Var};
use super::tensor::Tensor;
use super::DiffError;

/// Outcome of comparing analytic gradients with central finite differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Max of `|analytic − fd| / max(1, |fd|)` for each parameter tensor.
    pub per_param: Vec<f64>,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn max_discrepancy(&self) -> f64 {
        self.per_param.iter().copied().fold(0.0, f64::max)
    }
}

fn evaluate<F>(
    f: &F,
    params: &[Tensor],
    trainable: bool,
) -> Result<(Tape, Vec<Var>, Var), DiffError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, DiffError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params
        .iter()
        .map(|p| tape.leaf(p.clone(), trainable))
        .collect();
    let root = f(&mut tape, &vars)?;
    let value = tape.scalar(root);
    if !value.is_finite() {
        return Err(DiffError::NonFinite(format!(
            "objective evaluated to {value}"
        )));
    }
    Ok((tape, vars, root))
}

/// Checks the tape's gradient of the scalar function `f` against central
/// differences with the given `step`, for every entry of every parameter.
pub fn grad_check<F>(
    f: F,
    params: &[Tensor],
    step: f64,
    tol: f64,
) -> Result<GradCheckReport, DiffError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, DiffError>,
{
    if !(step > 0.0) {
        return Err(DiffError::Domain(format!(
            "finite-difference step {step} must be positive"
        )));
    }
    let (mut tape, vars, root) = evaluate(&f, params, true)?;
    tape.backward(root)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(params)
        .map(|(v, p)| {
            tape.grad(*v)
                .map_or_else(|| vec![0.0; p.len()], <[f64]>::to_vec)
        })
        .collect();
    drop(tape);

    let mut work: Vec<Tensor> = params.to_vec();
    let mut per_param = Vec::with_capacity(params.len());
    for (pi, grad) in analytic.iter().enumerate() {
        let mut worst: f64 = 0.0;
        for k in 0..params[pi].len() {
            if !grad[k].is_finite() {
                return Err(DiffError::NonFinite(format!(
                    "analytic gradient of param {pi}[{k}]"
                )));
            }
            let orig = work[pi].data[k];
            work[pi].data[k] = orig + step;
            let (t_plus, _, r_plus) = evaluate(&f, &work, false)?;
            let plus = t_plus.scalar(r_plus);
            work[pi].data[k] = orig - step;
            let (t_minus, _, r_minus) = evaluate(&f, &work, false)?;
            let minus = t_minus.scalar(r_minus);
            work[pi].data[k] = orig;
            let fd = (plus - minus) / (2.0 * step);
            worst = worst.max((grad[k] - fd).abs() / fd.abs().max(1.0));
        }
        per_param.push(worst);
    }
    let passed = per_param.iter().all(|d| *d < tol);
    Ok(GradCheckReport {
        per_param,
        tolerance: tol,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_vec(
            rows,
            cols,
            (0..rows * cols)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
        )
    }

    #[test]
    fn sigmoid_of_linear_map_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = random(4, 4, &mut rng);
        let x = random(4, 1, &mut rng);
        let report = grad_check(
            |t, v| {
                let wx = t.matmul(v[0], v[1])?;
                let s = t.sigmoid(wx);
                Ok(t.sum(s))
            },
            &[w, x],
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn constant_function_has_zero_gradients() {
        let report = grad_check(
            |t, _| Ok(t.scalar_const(3.0)),
            &[Tensor::filled(2, 2, 1.0)],
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed);
        assert_eq!(report.max_discrepancy(), 0.0);
    }

    #[test]
    fn corrupted_backward_is_detected() {
        // y = Σ x² with a backward rule that reports x instead of 2x.
        let report = grad_check(
            |t, v| {
                let x = t.value(v[0]).clone();
                let out = Tensor::scalar(x.sq_norm());
                let y = t.custom(&[v[0]], out, |inp, _, g| {
                    vec![inp[0].data.iter().map(|x| x * g[0]).collect()]
                });
                Ok(y)
            },
            &[Tensor::from_vec(1, 3, vec![0.5, -1.0, 2.0])],
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(!report.passed);
    }

    #[test]
    fn non_finite_objective_is_an_error() {
        let r = grad_check(
            |t, v| {
                let e = t.exp(v[0]);
                Ok(t.sum(e))
            },
            &[Tensor::scalar(1e6)],
            1e-5,
            1e-4,
        );
        assert!(matches!(r, Err(DiffError::NonFinite(_))));
    }
}
