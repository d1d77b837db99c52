use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{MeanFieldModel, ModelCoefficients, Points, QuadraticParams, Space};
use crate::error::{Error, Result};
use crate::numeric::{canonical_sum, pairwise_sum};
use crate::oracle::GridDensity;

const TWO_PI: f64 = 2.0 * PI;

/// External (confining) potential `V`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExternalPotential {
    Zero,
    /// `V(x) = (k/2)|x|²`.
    Harmonic {
        stiffness: f64,
    },
    /// `V(x) = a Σ_j cos(2π x_j)`.
    TorusCosine {
        amplitude: f64,
    },
}

impl ExternalPotential {
    pub fn value(&self, x: &[f64]) -> f64 {
        match *self {
            ExternalPotential::Zero => 0.0,
            ExternalPotential::Harmonic { stiffness } => {
                0.5 * stiffness * x.iter().map(|c| c * c).sum::<f64>()
            }
            ExternalPotential::TorusCosine { amplitude } => {
                amplitude * x.iter().map(|c| (TWO_PI * c).cos()).sum::<f64>()
            }
        }
    }

    /// Overwrites `out` with `∇V(x)`.
    pub fn gradient(&self, x: &[f64], out: &mut [f64]) {
        match *self {
            ExternalPotential::Zero => out.fill(0.0),
            ExternalPotential::Harmonic { stiffness } => {
                for (o, c) in out.iter_mut().zip(x) {
                    *o = stiffness * c;
                }
            }
            ExternalPotential::TorusCosine { amplitude } => {
                for (o, c) in out.iter_mut().zip(x) {
                    *o = -TWO_PI * amplitude * (TWO_PI * c).sin();
                }
            }
        }
    }

    /// Operator-norm bound on `∇²V`.
    pub fn hessian_bound(&self) -> f64 {
        match *self {
            ExternalPotential::Zero => 0.0,
            ExternalPotential::Harmonic { stiffness } => stiffness.abs(),
            ExternalPotential::TorusCosine { amplitude } => TWO_PI * TWO_PI * amplitude.abs(),
        }
    }

    fn periodic(&self) -> bool {
        !matches!(self, ExternalPotential::Harmonic { .. })
    }

    fn validate(&self) -> Result<()> {
        let v = match *self {
            ExternalPotential::Zero => 0.0,
            ExternalPotential::Harmonic { stiffness } => stiffness,
            ExternalPotential::TorusCosine { amplitude } => amplitude,
        };
        if !v.is_finite() {
            return Err(Error::config("model.external", "parameter must be finite"));
        }
        Ok(())
    }
}

/// Translation-invariant interaction kernel `W(x, y) = W(x − y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum InteractionKernel {
    Zero,
    /// `W(z) = s|z|²`.
    SquaredDistance {
        strength: f64,
    },
    /// `W(z) = L e^{−|z|²}`.
    Gaussian {
        height: f64,
    },
    /// `W(z) = b Σ_j cos(2π z_j)`.
    TorusCosine {
        amplitude: f64,
    },
    Sum {
        terms: Vec<InteractionKernel>,
    },
}

impl InteractionKernel {
    pub fn value(&self, z: &[f64]) -> f64 {
        match self {
            InteractionKernel::Zero => 0.0,
            InteractionKernel::SquaredDistance { strength } => {
                strength * z.iter().map(|c| c * c).sum::<f64>()
            }
            InteractionKernel::Gaussian { height } => {
                height * (-z.iter().map(|c| c * c).sum::<f64>()).exp()
            }
            InteractionKernel::TorusCosine { amplitude } => {
                amplitude * z.iter().map(|c| (TWO_PI * c).cos()).sum::<f64>()
            }
            InteractionKernel::Sum { terms } => terms.iter().map(|t| t.value(z)).sum(),
        }
    }

    /// Adds `∇W(z)` into `out`.
    pub fn add_gradient(&self, z: &[f64], out: &mut [f64]) {
        match self {
            InteractionKernel::Zero => {}
            InteractionKernel::SquaredDistance { strength } => {
                for (o, c) in out.iter_mut().zip(z) {
                    *o += 2.0 * strength * c;
                }
            }
            InteractionKernel::Gaussian { height } => {
                let e = (-z.iter().map(|c| c * c).sum::<f64>()).exp();
                for (o, c) in out.iter_mut().zip(z) {
                    *o += -2.0 * height * c * e;
                }
            }
            InteractionKernel::TorusCosine { amplitude } => {
                for (o, c) in out.iter_mut().zip(z) {
                    *o += -TWO_PI * amplitude * (TWO_PI * c).sin();
                }
            }
            InteractionKernel::Sum { terms } => {
                for t in terms {
                    t.add_gradient(z, out);
                }
            }
        }
    }

    /// Bound on `sup |∇W|`, when finite.
    pub fn gradient_sup(&self, dim: usize) -> Option<f64> {
        match self {
            InteractionKernel::Zero => Some(0.0),
            InteractionKernel::SquaredDistance { strength } => (*strength == 0.0).then_some(0.0),
            // max_r 2L r e^{-r²} at r = 1/√2
            InteractionKernel::Gaussian { height } => {
                Some(height.abs() * 2f64.sqrt() * (-0.5f64).exp())
            }
            InteractionKernel::TorusCosine { amplitude } => {
                Some(TWO_PI * amplitude.abs() * (dim as f64).sqrt())
            }
            InteractionKernel::Sum { terms } => terms
                .iter()
                .map(|t| t.gradient_sup(dim))
                .sum::<Option<f64>>(),
        }
    }

    /// Operator-norm bound on `∇²W`.
    pub fn hessian_bound(&self) -> f64 {
        match self {
            InteractionKernel::Zero => 0.0,
            InteractionKernel::SquaredDistance { strength } => 2.0 * strength.abs(),
            InteractionKernel::Gaussian { height } => 2.0 * height.abs(),
            InteractionKernel::TorusCosine { amplitude } => TWO_PI * TWO_PI * amplitude.abs(),
            InteractionKernel::Sum { terms } => terms.iter().map(|t| t.hessian_bound()).sum(),
        }
    }

    fn periodic(&self) -> bool {
        match self {
            InteractionKernel::Zero | InteractionKernel::TorusCosine { .. } => true,
            InteractionKernel::SquaredDistance { .. } | InteractionKernel::Gaussian { .. } => false,
            InteractionKernel::Sum { terms } => terms.iter().all(|t| t.periodic()),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            InteractionKernel::Zero => true,
            InteractionKernel::SquaredDistance { strength } => strength.is_finite(),
            InteractionKernel::Gaussian { height } => height.is_finite(),
            InteractionKernel::TorusCosine { amplitude } => amplitude.is_finite(),
            InteractionKernel::Sum { terms } => return terms.iter().try_for_each(|t| t.validate()),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config(
                "model.interaction",
                "parameter must be finite",
            ))
        }
    }
}

/// `F(μ) = ∫V dμ + ½∫∫W(x−y) μ(dx)μ(dy)`, so that
/// `DF(μ, x) = ∇V(x) + ∫∇W(x−y) μ(dy)`.
///
/// The self-interaction term `j = i` is part of the empirical average.
#[derive(Debug, Clone)]
pub struct PairwiseModel {
    space: Space,
    external: ExternalPotential,
    interaction: InteractionKernel,
    coeffs: ModelCoefficients,
    quadratic: Option<QuadraticParams>,
}

impl PairwiseModel {
    pub fn new(
        space: Space,
        external: ExternalPotential,
        interaction: InteractionKernel,
        coeffs: ModelCoefficients,
    ) -> Result<Self> {
        if space.dim == 0 {
            return Err(Error::config("dim", "dimension must be at least 1"));
        }
        external.validate()?;
        interaction.validate()?;
        coeffs.validate()?;
        if space.is_torus() && !(external.periodic() && interaction.periodic()) {
            return Err(Error::config(
                "model",
                "torus models require periodic potentials (zero or torus_cosine)",
            ));
        }
        let quadratic = match (&external, &interaction) {
            (
                ExternalPotential::Harmonic { stiffness },
                InteractionKernel::SquaredDistance { strength },
            ) if !space.is_torus() => Some(QuadraticParams {
                r: *stiffness,
                s: *strength,
            }),
            (ExternalPotential::Harmonic { stiffness }, InteractionKernel::Zero)
                if !space.is_torus() =>
            {
                Some(QuadraticParams {
                    r: *stiffness,
                    s: 0.0,
                })
            }
            _ => None,
        };
        Ok(PairwiseModel {
            space,
            external,
            interaction,
            coeffs,
            quadratic,
        })
    }

    pub fn external(&self) -> &ExternalPotential {
        &self.external
    }

    pub fn interaction(&self) -> &InteractionKernel {
        &self.interaction
    }

    pub(crate) fn set_coeffs(&mut self, coeffs: ModelCoefficients) -> Result<()> {
        coeffs.validate()?;
        self.coeffs = coeffs;
        Ok(())
    }

    /// Per-coordinate empirical mean, for the `s|x−y|²` fast path.
    fn prepare(&self, positions: &Points) -> Option<Vec<f64>> {
        if !matches!(self.interaction, InteractionKernel::SquaredDistance { .. }) {
            return None;
        }
        let n = positions.n();
        let mut buf = vec![0.0; n];
        let mean = (0..positions.d())
            .map(|k| {
                for (b, row) in buf.iter_mut().zip(positions.rows()) {
                    *b = row[k];
                }
                canonical_sum(&mut buf) / n as f64
            })
            .collect();
        Some(mean)
    }

    fn force_prepared(&self, mean: Option<&[f64]>, positions: &Points, x: &[f64], out: &mut [f64]) {
        self.external.gradient(x, out);
        match (&self.interaction, mean) {
            (InteractionKernel::Zero, _) => {}
            (InteractionKernel::SquaredDistance { strength }, Some(mean)) => {
                // (1/N) Σ_j 2s(x − x_j) = 2s(x − mean)
                for ((o, c), m) in out.iter_mut().zip(x).zip(mean) {
                    *o += 2.0 * strength * (c - m);
                }
            }
            (kernel, _) => {
                let n = positions.n();
                let d = x.len();
                let mut grads = vec![0.0; n * d];
                let mut z = vec![0.0; d];
                for (j, row) in positions.rows().enumerate() {
                    for k in 0..d {
                        z[k] = self.space.displacement_coord(x[k], row[k]);
                    }
                    kernel.add_gradient(&z, &mut grads[j * d..(j + 1) * d]);
                }
                let mut col = vec![0.0; n];
                for k in 0..d {
                    for j in 0..n {
                        col[j] = grads[j * d + k];
                    }
                    out[k] += canonical_sum(&mut col) / n as f64;
                }
            }
        }
    }
}

impl MeanFieldModel for PairwiseModel {
    fn space(&self) -> Space {
        self.space
    }

    fn coeffs(&self) -> &ModelCoefficients {
        &self.coeffs
    }

    fn force(&self, positions: &Points, x: &[f64], out: &mut [f64]) {
        let mean = self.prepare(positions);
        self.force_prepared(mean.as_deref(), positions, x, out);
    }

    fn force_field(&self, positions: &Points, out: &mut Points) {
        let mean = self.prepare(positions);
        for i in 0..positions.n() {
            self.force_prepared(mean.as_deref(), positions, positions.row(i), out.row_mut(i));
        }
    }

    fn energy(&self, positions: &Points) -> Option<f64> {
        let n = positions.n();
        let d = positions.d();
        let mut ext: Vec<f64> = positions.rows().map(|x| self.external.value(x)).collect();
        let mut pair = Vec::with_capacity(n * n);
        let mut z = vec![0.0; d];
        for xi in positions.rows() {
            for xj in positions.rows() {
                for k in 0..d {
                    z[k] = self.space.displacement_coord(xi[k], xj[k]);
                }
                pair.push(self.interaction.value(&z));
            }
        }
        let nf = n as f64;
        Some(canonical_sum(&mut ext) / nf + 0.5 * canonical_sum(&mut pair) / (nf * nf))
    }

    fn confining_potential(&self, x: &[f64]) -> Option<f64> {
        Some(self.external.value(x))
    }

    fn linear_derivative(&self, density: &GridDensity, x: f64) -> Option<f64> {
        if self.space.dim != 1 {
            return None;
        }
        let dx = density.cell_width();
        let terms: Vec<f64> = density
            .centers()
            .zip(density.values())
            .map(|(y, w)| {
                self.interaction
                    .value(&[self.space.displacement_coord(x, y)])
                    * w
                    * dx
            })
            .collect();
        Some(self.external.value(&[x]) + pairwise_sum(&terms))
    }

    fn quadratic_params(&self) -> Option<QuadraticParams> {
        self.quadratic
    }
}
