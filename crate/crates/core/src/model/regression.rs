use super::{ExternalPotential, MeanFieldModel, ModelCoefficients, Points, Space};
use crate::error::{Error, Result};
use crate::numeric::{canonical_sum, pairwise_sum};
use crate::oracle::GridDensity;

fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

fn sigmoid_prime(t: f64) -> f64 {
    let s = sigmoid(t);
    s * (1.0 - s)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mean-field shallow network with sigmoid units and quadratic loss:
/// `F(μ) = ∫V dμ + (1/K) Σ_k ½(φ_μ(X_k) − Y_k)²`, `φ_μ(X) = ∫σ(θ·X) μ(dθ)`,
/// with ridge `V(θ) = (r/2)|θ|²`. Flat-convex in `μ`.
#[derive(Debug, Clone)]
pub struct RegressionModel {
    dim: usize,
    inputs: Vec<Vec<f64>>,
    targets: Vec<f64>,
    ridge: ExternalPotential,
    coeffs: ModelCoefficients,
}

impl RegressionModel {
    pub fn new(inputs: Vec<Vec<f64>>, targets: Vec<f64>, ridge: f64, dim: usize) -> Result<Self> {
        if inputs.is_empty() || inputs.len() != targets.len() {
            return Err(Error::config(
                "model.inputs",
                "need a nonempty dataset with one target per input",
            ));
        }
        if inputs.iter().any(|x| x.len() != dim) {
            return Err(Error::config(
                "model.inputs",
                format!("every input must have length {dim}"),
            ));
        }
        if inputs
            .iter()
            .flatten()
            .chain(&targets)
            .any(|v| !v.is_finite())
        {
            return Err(Error::config(
                "model.inputs",
                "dataset entries must be finite",
            ));
        }
        if !(ridge.is_finite() && ridge > 0.0) {
            return Err(Error::config("model.ridge", "ridge must be positive"));
        }
        let sqrt_d = (dim as f64).sqrt();
        // |DF_1| ≤ (1/K) Σ |φ − Y| · ¼ |X_k| with φ ∈ (0,1).
        let drift_bound = inputs
            .iter()
            .zip(&targets)
            .map(|(x, y)| (1.0 + y.abs()) * 0.25 * dot(x, x).sqrt())
            .sum::<f64>()
            / inputs.len() as f64;
        let coeffs = ModelCoefficients {
            lambda_growth: Some(0.0),
            m_bnd: Some(drift_bound / sqrt_d),
            r_conf: Some(ridge),
            k_conf: Some(0.0),
            l_hess: Some(ridge),
            c0: Some(ridge / 2.0),
            c1: Some(ridge / 2.0),
            r0_low: Some(0.0),
            r1_up: Some(0.0),
            ..Default::default()
        };
        Ok(RegressionModel {
            dim,
            inputs,
            targets,
            ridge: ExternalPotential::Harmonic { stiffness: ridge },
            coeffs,
        })
    }

    pub(crate) fn set_coeffs(&mut self, coeffs: ModelCoefficients) -> Result<()> {
        coeffs.validate()?;
        self.coeffs = coeffs;
        Ok(())
    }

    /// `φ_π(X_k)` for every data point, as order-independent empirical means.
    fn predictions(&self, positions: &Points) -> Vec<f64> {
        let n = positions.n();
        let mut buf = vec![0.0; n];
        self.inputs
            .iter()
            .map(|x| {
                for (b, theta) in buf.iter_mut().zip(positions.rows()) {
                    *b = sigmoid(dot(theta, x));
                }
                canonical_sum(&mut buf) / n as f64
            })
            .collect()
    }

    fn force_with(&self, preds: &[f64], theta: &[f64], out: &mut [f64]) {
        self.ridge.gradient(theta, out);
        let k = self.inputs.len() as f64;
        let mut acc = vec![0.0; self.dim];
        for ((x, y), p) in self.inputs.iter().zip(&self.targets).zip(preds) {
            let w = (p - y) * sigmoid_prime(dot(theta, x));
            for (a, xc) in acc.iter_mut().zip(x) {
                *a += w * xc;
            }
        }
        for (o, a) in out.iter_mut().zip(acc) {
            *o += a / k;
        }
    }
}

impl MeanFieldModel for RegressionModel {
    fn space(&self) -> Space {
        Space::euclidean(self.dim)
    }

    fn coeffs(&self) -> &ModelCoefficients {
        &self.coeffs
    }

    fn force(&self, positions: &Points, x: &[f64], out: &mut [f64]) {
        let preds = self.predictions(positions);
        self.force_with(&preds, x, out);
    }

    fn force_field(&self, positions: &Points, out: &mut Points) {
        let preds = self.predictions(positions);
        for i in 0..positions.n() {
            self.force_with(&preds, positions.row(i), out.row_mut(i));
        }
    }

    fn energy(&self, positions: &Points) -> Option<f64> {
        let n = positions.n() as f64;
        let mut ext: Vec<f64> = positions.rows().map(|t| self.ridge.value(t)).collect();
        let preds = self.predictions(positions);
        let loss: Vec<f64> = preds
            .iter()
            .zip(&self.targets)
            .map(|(p, y)| 0.5 * (p - y) * (p - y))
            .collect();
        Some(canonical_sum(&mut ext) / n + pairwise_sum(&loss) / self.inputs.len() as f64)
    }

    fn confining_potential(&self, x: &[f64]) -> Option<f64> {
        Some(self.ridge.value(x))
    }

    fn linear_derivative(&self, density: &GridDensity, theta: f64) -> Option<f64> {
        if self.dim != 1 {
            return None;
        }
        let dx = density.cell_width();
        let k = self.inputs.len() as f64;
        let terms: Vec<f64> = self
            .inputs
            .iter()
            .zip(&self.targets)
            .map(|(x, y)| {
                let phi: Vec<f64> = density
                    .centers()
                    .zip(density.values())
                    .map(|(t, w)| sigmoid(t * x[0]) * w * dx)
                    .collect();
                (pairwise_sum(&phi) - y) * sigmoid(theta * x[0])
            })
            .collect();
        Some(self.ridge.value(&[theta]) + pairwise_sum(&terms) / k)
    }
}
