use serde::{Deserialize, Serialize};

use super::{
    ExternalPotential, InteractionKernel, MeanFieldModel, ModelCoefficients, PairwiseModel,
    RegressionModel, Space, SpaceKind,
};
use crate::error::{Error, Result};

/// Serializable description of a built-in model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    /// `F(μ) = ∫V dμ + ½∫∫W dμ dμ` with user-chosen `V`, `W`.
    Pairwise {
        #[serde(default = "default_space")]
        space: SpaceKind,
        external: ExternalPotential,
        interaction: InteractionKernel,
    },
    /// `V = (r/2)|x|²`, `W = s|x−y|²`.
    Quadratic { r: f64, s: f64 },
    /// `V = (r/2)|x|²`, `W = L e^{−|x−y|²} + s|x−y|²`: short-range repulsion,
    /// long-range attraction.
    GaussAttractRepel {
        #[serde(rename = "L")]
        l: f64,
        s: f64,
        r: f64,
    },
    /// Torus model `V = a Σ cos(2πx_j)`, `W = b Σ cos(2π(x_j−y_j))`.
    TorusTrig { a: f64, b: f64 },
    /// Sigmoid mean-field regression with quadratic loss and ridge penalty.
    FlatConvexRegression {
        inputs: Vec<Vec<f64>>,
        targets: Vec<f64>,
        ridge: f64,
    },
}

fn default_space() -> SpaceKind {
    SpaceKind::Euclidean
}

impl ModelSpec {
    pub fn space_kind(&self) -> SpaceKind {
        match self {
            ModelSpec::Pairwise { space, .. } => *space,
            ModelSpec::TorusTrig { .. } => SpaceKind::Torus,
            _ => SpaceKind::Euclidean,
        }
    }

    /// The confining potential `V` as a standalone function.
    pub fn external_potential(&self) -> ExternalPotential {
        match self {
            ModelSpec::Pairwise { external, .. } => external.clone(),
            ModelSpec::Quadratic { r, .. } | ModelSpec::GaussAttractRepel { r, .. } => {
                ExternalPotential::Harmonic { stiffness: *r }
            }
            ModelSpec::TorusTrig { a, .. } => ExternalPotential::TorusCosine { amplitude: *a },
            ModelSpec::FlatConvexRegression { ridge, .. } => {
                ExternalPotential::Harmonic { stiffness: *ridge }
            }
        }
    }
}

fn pairwise_coeffs(
    space: Space,
    v: &ExternalPotential,
    w: &InteractionKernel,
) -> ModelCoefficients {
    let hv = v.hessian_bound();
    let hw = w.hessian_bound();
    let mut c = ModelCoefficients {
        m1x: Some(hv + hw),
        m1m: Some(hw),
        l1: Some(hv + 2.0 * hw),
        ..Default::default()
    };
    if space.is_torus() {
        let v_sup = match *v {
            ExternalPotential::TorusCosine { amplitude } => {
                2.0 * std::f64::consts::PI * amplitude.abs() * (space.dim as f64).sqrt()
            }
            _ => 0.0,
        };
        c.df_sup = w.gradient_sup(space.dim).map(|g| v_sup + g);
    } else if let ExternalPotential::Harmonic { stiffness } = *v {
        c.r_conf = Some(stiffness);
        c.k_conf = Some(0.0);
        c.l_hess = Some(stiffness);
        c.c0 = Some(stiffness / 2.0);
        c.c1 = Some(stiffness / 2.0);
        c.r0_low = Some(0.0);
        c.r1_up = Some(0.0);
    }
    c
}

fn positive(path: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::config(path, format!("must be positive, got {v}")))
    }
}

fn nonnegative(path: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::config(path, format!("must be nonnegative, got {v}")))
    }
}

/// Builds a built-in model in dimension `dim`. Coefficients present in
/// `overrides` replace the automatically filled ones.
pub fn make_builtin_model(
    spec: &ModelSpec,
    dim: usize,
    overrides: Option<&ModelCoefficients>,
) -> Result<Box<dyn MeanFieldModel>> {
    if dim == 0 {
        return Err(Error::config("dim", "dimension must be at least 1"));
    }
    let merge = |c: ModelCoefficients| match overrides {
        Some(o) => c.merged_with(o),
        None => c,
    };
    match spec {
        ModelSpec::Pairwise {
            space,
            external,
            interaction,
        } => {
            let space = Space { kind: *space, dim };
            let mut m = PairwiseModel::new(
                space,
                external.clone(),
                interaction.clone(),
                Default::default(),
            )?;
            m.set_coeffs(merge(pairwise_coeffs(space, external, interaction)))?;
            Ok(Box::new(m))
        }
        ModelSpec::Quadratic { r, s } => {
            positive("model.r", *r)?;
            nonnegative("model.s", *s)?;
            let space = Space::euclidean(dim);
            let v = ExternalPotential::Harmonic { stiffness: *r };
            let w = InteractionKernel::SquaredDistance { strength: *s };
            let mut c = pairwise_coeffs(space, &v, &w);
            c.lambda_growth = Some(2.0 * s);
            c.m_bnd = Some(0.0);
            // ∇U_N is linear: the higher-order regularity constants vanish.
            c.l2 = Some(0.0);
            c.l3 = Some(0.0);
            let mut m = PairwiseModel::new(space, v, w, Default::default())?;
            m.set_coeffs(merge(c))?;
            Ok(Box::new(m))
        }
        ModelSpec::GaussAttractRepel { l, s, r } => {
            nonnegative("model.L", *l)?;
            nonnegative("model.s", *s)?;
            positive("model.r", *r)?;
            let space = Space::euclidean(dim);
            let v = ExternalPotential::Harmonic { stiffness: *r };
            let w = InteractionKernel::Sum {
                terms: vec![
                    InteractionKernel::Gaussian { height: *l },
                    InteractionKernel::SquaredDistance { strength: *s },
                ],
            };
            let mut c = pairwise_coeffs(space, &v, &w);
            c.lambda_growth = Some(2.0 * s);
            // |DF_1| ≤ sup|∇W_1| + 2s(|y| + ∫|x|dμ), with sup|∇W_1| = L√2 e^{-1/2} = M√d.
            let grad_w1_sup = l * 2f64.sqrt() * (-0.5f64).exp();
            c.m_bnd = Some(grad_w1_sup / (dim as f64).sqrt());
            let mut m = PairwiseModel::new(space, v, w, Default::default())?;
            m.set_coeffs(merge(c))?;
            Ok(Box::new(m))
        }
        ModelSpec::TorusTrig { a, b } => {
            if !(a.is_finite() && b.is_finite()) {
                return Err(Error::config(
                    "model",
                    "torus_trig amplitudes must be finite",
                ));
            }
            let space = Space::torus(dim);
            let v = ExternalPotential::TorusCosine { amplitude: *a };
            let w = InteractionKernel::TorusCosine { amplitude: *b };
            let mut c = pairwise_coeffs(space, &v, &w);
            c.df_sup = Some(2.0 * std::f64::consts::PI * (a.abs() + b.abs()) * (dim as f64).sqrt());
            let mut m = PairwiseModel::new(space, v, w, Default::default())?;
            m.set_coeffs(merge(c))?;
            Ok(Box::new(m))
        }
        ModelSpec::FlatConvexRegression {
            inputs,
            targets,
            ridge,
        } => {
            let mut m = RegressionModel::new(inputs.clone(), targets.clone(), *ridge, dim)?;
            let c = m.coeffs().clone();
            m.set_coeffs(merge(c))?;
            Ok(Box::new(m))
        }
    }
}
