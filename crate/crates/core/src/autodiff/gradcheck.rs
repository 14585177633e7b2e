use super::{AutodiffError, ParamId, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Lower bound on the denominator of the relative error, so that
    /// coordinates whose true gradient is ~0 are judged on absolute error.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { step: 1e-6, floor: 1e-4 }
    }
}

/// Compares reverse-mode gradients of a scalar graph against central
/// differences and returns the worst relative error over every input
/// coordinate.
///
/// Numerical evaluations replay the stop-gradient outputs of the unperturbed
/// pass, so blocked paths are differentiated with the blocked semantics
/// (their inputs act as constants) rather than through the identity forward.
pub fn grad_check<F>(graph: F, inputs: &[Tensor], cfg: GradCheckConfig) -> Result<f64, AutodiffError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, AutodiffError>,
{
    if cfg.step.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(AutodiffError::InvalidArgument("finite-difference step must be positive".into()));
    }
    let (analytic, replay) = {
        let mut tape = Tape::new();
        let vars = bind(&mut tape, inputs)?;
        let loss = graph(&mut tape, &vars)?;
        (tape.backward(loss)?, tape.stop_gradient_log().to_vec())
    };
    let eval = |xs: &[Tensor]| -> Result<f64, AutodiffError> {
        let mut tape = Tape::with_stop_gradient_replay(replay.clone());
        let vars = bind(&mut tape, xs)?;
        let loss = graph(&mut tape, &vars)?;
        Ok(tape.value(loss).item())
    };

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let grad = analytic.get(ParamId(i));
        for j in 0..input.numel() {
            let x0 = input.data()[j];
            work[i].data_mut()[j] = x0 + cfg.step;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = x0 - cfg.step;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = x0;
            let numeric = (plus - minus) / (2.0 * cfg.step);
            let a = grad.map_or(0.0, |g| g.data()[j]);
            let denom = a.abs().max(numeric.abs()).max(cfg.floor);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}

fn bind(tape: &mut Tape, inputs: &[Tensor]) -> Result<Vec<Var>, AutodiffError> {
    inputs
        .iter()
        .enumerate()
        .map(|(i, t)| tape.param(ParamId(i), t.clone()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blocked_path_passes_against_blocked_semantics() {
        let w = Tensor::vector(vec![0.7, -1.2, 2.5]);
        // loss = sum(w ⊙ sg(w)): the unblocked surrogate would give 2w
        let err = grad_check(
            |t, v| {
                let s = t.stop_gradient(v[0])?;
                let p = t.mul(v[0], s)?;
                t.sum(p)
            },
            &[w],
            GradCheckConfig::default(),
        )
        .unwrap();
        assert!(err < 1e-5, "err {err}");
    }

    #[test]
    fn fully_blocked_graph_has_zero_gradients() {
        let w = Tensor::vector(vec![0.7, -1.2]);
        let err = grad_check(
            |t, v| {
                let s = t.stop_gradient(v[0])?;
                t.sum(s)
            },
            &[w],
            GradCheckConfig::default(),
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn rejects_non_positive_step() {
        let r = grad_check(|t, v| t.sum(v[0]), &[Tensor::scalar(1.0)], GradCheckConfig { step: 0.0, floor: 1e-4 });
        assert!(r.is_err());
    }
}
