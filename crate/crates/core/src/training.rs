//! Full-batch gradient descent with a fixed step size.

use std::io::Write;

use crate::error::{Error, Result};
use crate::gmm::GmmParams;
use crate::network::{Dataset, RiskWorkspace, Weights};

pub const DEFAULT_MAX_STEPS: usize = 10_000;
pub const DEFAULT_GRAD_TOL: f64 = 1e-10;

/// Allowed risk increase between consecutive iterates before a step is flagged.
const DESCENT_SLACK: f64 = 1e-12;

/// `η₀ = (Σ_l λ_l (‖μ_l‖_∞ + 1)²)⁻¹`.
pub fn step_size(params: &GmmParams) -> f64 {
    let denom: f64 = params
        .weights()
        .iter()
        .zip(params.means().column_iter())
        .map(|(&lambda, mu)| {
            let inf = mu.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            lambda * (inf + 1.0).powi(2)
        })
        .sum();
    1.0 / denom
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GdConfig {
    pub step_size: f64,
    pub max_steps: usize,
    pub grad_tol: f64,
}

impl GdConfig {
    pub fn new(step_size: f64) -> Self {
        Self {
            step_size,
            max_steps: DEFAULT_MAX_STEPS,
            grad_tol: DEFAULT_GRAD_TOL,
        }
    }

    pub fn max_steps(mut self, t: usize) -> Self {
        self.max_steps = t;
        self
    }

    pub fn grad_tol(mut self, tol: f64) -> Self {
        self.grad_tol = tol;
        self
    }
}

/// Why a run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    GradientTolerance,
    MaxSteps,
}

/// Per-iterate record of a gradient-descent run. Series are indexed by step
/// `t = 0..=steps_run`.
#[derive(Debug, Clone)]
pub struct TrainTrace {
    pub risk: Vec<f64>,
    pub grad_norm: Vec<f64>,
    /// `‖W_t − Ŵ_n‖_F`, measured against the final iterate.
    pub rel_error: Vec<f64>,
    pub final_weights: Weights,
    pub step_size: f64,
    pub steps_run: usize,
    pub stop: StopReason,
    /// Steps `t` where `f_n(W_t) > f_n(W_{t-1}) + 1e-12`.
    pub ascent_steps: Vec<usize>,
}

impl TrainTrace {
    /// Writes `step,risk,grad_norm,rel_error` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "step,risk,grad_norm,rel_error")?;
        for t in 0..=self.steps_run {
            writeln!(
                out,
                "{t},{:e},{:e},{:e}",
                self.risk[t], self.grad_norm[t], self.rel_error[t]
            )?;
        }
        Ok(())
    }

    /// Least-squares fit of `log rel_error` against the step index over the
    /// last `fraction` of the steps with positive error.
    pub fn log_error_fit(&self, fraction: f64) -> Option<LineFit> {
        let points: Vec<(f64, f64)> = self
            .rel_error
            .iter()
            .enumerate()
            .filter(|(_, &e)| e > 0.0)
            .map(|(t, &e)| (t as f64, e.ln()))
            .collect();
        let keep = ((points.len() as f64) * fraction).round() as usize;
        if keep < 3 {
            return None;
        }
        fit_line(&points[points.len() - keep..])
    }
}

/// `y ≈ intercept + slope · x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn fit_line(points: &[(f64, f64)]) -> Option<LineFit> {
    let n = points.len() as f64;
    if points.len() < 2 {
        return None;
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some(LineFit {
        slope,
        intercept,
        r_squared,
    })
}

/// Runs `W_{t+1} = W_t − η ∇f_n(W_t)` from `w0` until the gradient norm drops
/// below `grad_tol` or `max_steps` updates have been made.
pub fn gradient_descent(w0: &Weights, data: &Dataset, cfg: &GdConfig) -> Result<TrainTrace> {
    if !cfg.step_size.is_finite() || cfg.step_size <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "step size must be positive, got {}",
            cfg.step_size
        )));
    }
    if cfg.max_steps == 0 {
        return Err(Error::InvalidInput("max_steps must be at least 1".into()));
    }
    if w0.dim() != data.dim() {
        return Err(Error::DimensionMismatch(format!(
            "weights have d={}, data has d={}",
            w0.dim(),
            data.dim()
        )));
    }
    let mut w = w0.matrix().clone();
    let stride = w.len();
    let mut ws = RiskWorkspace::new(data, w.ncols());
    let mut iterates: Vec<f64> = Vec::new();
    let mut risk = Vec::new();
    let mut grad_norm = Vec::new();
    let mut ascent_steps = Vec::new();
    let mut stop = StopReason::MaxSteps;
    let mut t = 0;
    loop {
        let f = ws.evaluate(&w, data);
        let gn = ws.gradient.norm();
        if !f.is_finite() || !gn.is_finite() || w.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { step: t });
        }
        if let Some(&prev) = risk.last() {
            if f > prev + DESCENT_SLACK {
                ascent_steps.push(t);
            }
        }
        risk.push(f);
        grad_norm.push(gn);
        iterates.extend_from_slice(w.as_slice());
        if gn < cfg.grad_tol {
            stop = StopReason::GradientTolerance;
            break;
        }
        if t == cfg.max_steps {
            break;
        }
        w.zip_apply(&ws.gradient, |a, g| *a -= cfg.step_size * g);
        t += 1;
    }
    let rel_error = iterates
        .chunks_exact(stride)
        .map(|wt| {
            wt.iter()
                .zip(w.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    Ok(TrainTrace {
        risk,
        grad_norm,
        rel_error,
        final_weights: Weights::new(w)?,
        step_size: cfg.step_size,
        steps_run: t,
        stop,
        ascent_steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{generate_dataset, risk_gradient};
    use nalgebra::{DMatrix, DVector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn step_size_formula() {
        let p = GmmParams::symmetric_pair(4, 0.5).unwrap();
        assert!((step_size(&p) - 1.0 / 2.25).abs() < 1e-15);
        assert_eq!(step_size(&GmmParams::standard(3).unwrap()), 1.0);
        let mut prev = f64::INFINITY;
        for c in [0.0, 0.3, 0.9, 2.0] {
            let eta = step_size(&GmmParams::symmetric_pair(3, c).unwrap());
            assert!(eta < prev);
            prev = eta;
        }
        let p = GmmParams::new(
            vec![0.4, 0.6],
            vec![DVector::from_vec(vec![2.0, -3.0]), DVector::zeros(2)],
        )
        .unwrap();
        assert!((step_size(&p) - 1.0 / (0.4 * 16.0 + 0.6)).abs() < 1e-15);
    }

    fn small_problem(seed: u64) -> (Weights, Dataset, GmmParams) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = GmmParams::symmetric_pair(3, 0.5).unwrap();
        let wstar = Weights::random(3, 2, 1.0, &mut rng);
        let data = generate_dataset(&p, &wstar, 400, &mut rng).unwrap();
        (wstar, data, p)
    }

    #[test]
    fn critical_point_returns_immediately() {
        let (wstar, data, p) = small_problem(1);
        let cfg = GdConfig::new(step_size(&p)).max_steps(50_000).grad_tol(1e-9);
        let trace = gradient_descent(&wstar, &data, &cfg).unwrap();
        assert_eq!(trace.stop, StopReason::GradientTolerance);
        let again = gradient_descent(&trace.final_weights, &data, &cfg).unwrap();
        assert_eq!(again.steps_run, 0);
        assert_eq!(again.final_weights, trace.final_weights);
        assert!(risk_gradient(&trace.final_weights, &data).unwrap().norm() < 1e-8);
    }

    #[test]
    fn trace_shape_and_descent() {
        let (wstar, data, p) = small_problem(2);
        let cfg = GdConfig::new(step_size(&p)).max_steps(300);
        let w0 = Weights::new(wstar.matrix() * 0.2).unwrap();
        let trace = gradient_descent(&w0, &data, &cfg).unwrap();
        assert_eq!(trace.risk.len(), trace.steps_run + 1);
        assert_eq!(trace.grad_norm.len(), trace.steps_run + 1);
        assert_eq!(trace.rel_error.len(), trace.steps_run + 1);
        assert_eq!(*trace.rel_error.last().unwrap(), 0.0);
        assert!(trace.ascent_steps.is_empty());
        for pair in trace.risk.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12);
        }
        let again = gradient_descent(&w0, &data, &cfg).unwrap();
        assert_eq!(again.risk, trace.risk);
        assert_eq!(again.final_weights, trace.final_weights);

        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("step,risk,grad_norm,rel_error\n"));
        assert_eq!(text.lines().count(), trace.steps_run + 2);
    }

    #[test]
    fn rejects_bad_config() {
        let (wstar, data, _) = small_problem(3);
        assert!(gradient_descent(&wstar, &data, &GdConfig::new(0.0)).is_err());
        assert!(gradient_descent(&wstar, &data, &GdConfig::new(1.0).max_steps(0)).is_err());
    }

    #[test]
    fn huge_step_diverges_or_stays_finite() {
        let (wstar, data, _) = small_problem(4);
        let w0 = Weights::new(DMatrix::from_element(3, 2, 1.0)).unwrap();
        match gradient_descent(&w0, &data, &GdConfig::new(1e300).max_steps(20)) {
            Err(Error::Diverged { step }) => assert!(step <= 20),
            Ok(trace) => assert!(trace.final_weights.matrix().iter().all(|v| v.is_finite())),
            Err(e) => panic!("unexpected error {e}"),
        }
        let _ = wstar;
    }

    #[test]
    fn line_fit_exact() {
        let pts: Vec<(f64, f64)> = (0..10).map(|t| (t as f64, 2.0 - 0.3 * t as f64)).collect();
        let fit = fit_line(&pts).unwrap();
        assert!((fit.slope + 0.3).abs() < 1e-12);
        assert!((fit.intercept - 2.0).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
    }
}
