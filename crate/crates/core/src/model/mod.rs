//! State spaces, particle configurations and the mean-field energy abstraction.
//!
//! A [`MeanFieldModel`] exposes the intrinsic derivative `DF(π_x, x)` of an
//! energy functional `F` evaluated at the empirical measure of a particle
//! configuration. The N-particle potential is `U_N(x) = N F(π_x)` and its
//! gradient has rows `∇_{x_i} U_N(x) = DF(π_x, x_i)`.

mod pairwise;
mod regression;
mod spec;

pub use pairwise::{ExternalPotential, InteractionKernel, PairwiseModel};
pub use regression::RegressionModel;
pub use spec::{make_builtin_model, ModelSpec};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::GridDensity;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpaceKind {
    Euclidean,
    Torus,
}

/// Ambient space `R^d` or the flat torus `T^d = (R/Z)^d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Space {
    pub kind: SpaceKind,
    pub dim: usize,
}

impl Space {
    pub fn euclidean(dim: usize) -> Self {
        Space {
            kind: SpaceKind::Euclidean,
            dim,
        }
    }

    pub fn torus(dim: usize) -> Self {
        Space {
            kind: SpaceKind::Torus,
            dim,
        }
    }

    pub fn is_torus(&self) -> bool {
        self.kind == SpaceKind::Torus
    }

    /// Maps a coordinate to its representative in `[0, 1)` on the torus;
    /// identity in Euclidean space.
    #[inline]
    pub fn wrap_coord(&self, x: f64) -> f64 {
        if !self.is_torus() {
            return x;
        }
        let w = x - x.floor();
        // x - floor(x) rounds to 1.0 for tiny negative x.
        if w >= 1.0 {
            0.0
        } else {
            w
        }
    }

    pub fn wrap(&self, x: &mut [f64]) {
        if self.is_torus() {
            for c in x.iter_mut() {
                *c = self.wrap_coord(*c);
            }
        }
    }

    /// Displacement `x - y`; on the torus the minimal-image representative
    /// in `(-1/2, 1/2]`.
    #[inline]
    pub fn displacement_coord(&self, x: f64, y: f64) -> f64 {
        let z = x - y;
        if !self.is_torus() {
            return z;
        }
        let r = z - z.round();
        if r <= -0.5 {
            r + 1.0
        } else {
            r
        }
    }
}

/// Row-major `n × d` matrix of reals: one row per particle.
#[derive(Debug, Clone, PartialEq)]
pub struct Points {
    n: usize,
    d: usize,
    data: Vec<f64>,
}

impl Points {
    pub fn zeros(n: usize, d: usize) -> Self {
        Points {
            n,
            d,
            data: vec![0.0; n * d],
        }
    }

    pub fn from_vec(n: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * d {
            return Err(Error::config(
                "points",
                format!("expected {} entries for {n}x{d}, got {}", n * d, data.len()),
            ));
        }
        Ok(Points { n, d, data })
    }

    /// Column vector of `n` scalars (`d = 1`).
    pub fn from_scalars(values: &[f64]) -> Self {
        Points {
            n: values.len(),
            d: 1,
            data: values.to_vec(),
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::config("points", "ragged rows"));
        }
        Ok(Points {
            n: rows.len(),
            d,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.d.max(1)).take(self.n)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Row `i` of the result is row `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.n);
        let mut out = Points::zeros(self.n, self.d);
        for (i, &p) in perm.iter().enumerate() {
            out.row_mut(i).copy_from_slice(self.row(p));
        }
        out
    }

    /// Squared Euclidean norm of row `i`.
    #[inline]
    pub fn row_norm_sq(&self, i: usize) -> f64 {
        self.row(i).iter().map(|c| c * c).sum()
    }
}

/// Positions and velocities of N particles.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleState {
    pub positions: Points,
    pub velocities: Points,
    pub space: Space,
}

impl ParticleState {
    /// Validating constructor: shapes agree, `N ≥ 1`, entries finite, torus
    /// positions in `[0, 1)`.
    pub fn new(positions: Points, velocities: Points, space: Space) -> Result<Self> {
        let state = ParticleState {
            positions,
            velocities,
            space,
        };
        state.validate()?;
        Ok(state)
    }

    pub fn validate(&self) -> Result<()> {
        let (p, v) = (&self.positions, &self.velocities);
        if p.n() == 0 {
            return Err(Error::config("state", "need at least one particle"));
        }
        if p.n() != v.n() || p.d() != v.d() {
            return Err(Error::config(
                "state",
                "positions and velocities differ in shape",
            ));
        }
        if p.d() != self.space.dim {
            return Err(Error::config(
                "state",
                format!(
                    "dimension {} does not match space dimension {}",
                    p.d(),
                    self.space.dim
                ),
            ));
        }
        if !p.all_finite() || !v.all_finite() {
            return Err(Error::domain("state contains non-finite entries"));
        }
        if self.space.is_torus() && p.as_slice().iter().any(|&x| !(0.0..1.0).contains(&x)) {
            return Err(Error::config("state", "torus positions must lie in [0,1)"));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.positions.n()
    }

    pub fn d(&self) -> usize {
        self.positions.d()
    }

    /// Relabels particles: particle `i` of the result is particle `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        ParticleState {
            positions: self.positions.permuted(perm),
            velocities: self.velocities.permuted(perm),
            space: self.space,
        }
    }
}

/// Regularity and Lyapunov coefficients declared for a model.
///
/// Names follow the roles they play: `m1x`/`m1m` are the Lipschitz constants
/// of `DF` in the point and in the measure (W2), `l1..l3` the regularity
/// constants of `∇U_N`, `df_sup` the sup-norm of `DF` on the torus, and the
/// remaining fields the confinement/growth constants of the Euclidean
/// Lyapunov condition (`|DF_1| ≤ M√d + λ|y| + λ∫|x|dμ`,
/// `-y·∇V ≤ -r|y|² + Kd`, `dR_0 + c_0|y|² ≤ V ≤ dR_1 + c_1|y|²`, `|∇²V| ≤ L`).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelCoefficients {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m1x: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m1m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l3: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub df_sup: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m_bnd: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_growth: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_conf: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_conf: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_hess: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r0_low: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r1_up: Option<f64>,
}

macro_rules! coeff_fields {
    ($m:ident) => {
        $m!(
            m1x,
            m1m,
            l1,
            l2,
            l3,
            df_sup,
            m_bnd,
            lambda_growth,
            r_conf,
            k_conf,
            l_hess,
            c0,
            c1,
            r0_low,
            r1_up
        )
    };
}

impl ModelCoefficients {
    pub fn validate(&self) -> Result<()> {
        macro_rules! check {
            ($($f:ident),*) => {$(
                if let Some(v) = self.$f {
                    if !(v.is_finite() && v >= 0.0) {
                        return Err(Error::config(
                            concat!("coefficients.", stringify!($f)),
                            format!("must be a finite nonnegative real, got {v}"),
                        ));
                    }
                }
            )*};
        }
        coeff_fields!(check);
        if let (Some(c0), Some(c1)) = (self.c0, self.c1) {
            if c0 > c1 {
                return Err(Error::config("coefficients.c0", "c0 must not exceed c1"));
            }
        }
        if let (Some(r0), Some(r1)) = (self.r0_low, self.r1_up) {
            if r0 > r1 {
                return Err(Error::config(
                    "coefficients.r0_low",
                    "r0_low must not exceed r1_up",
                ));
            }
        }
        if let (Some(l1), Some(a), Some(b)) = (self.l1, self.m1x, self.m1m) {
            if (l1 - (a + b)).abs() > 1e-12 * (1.0 + l1.abs()) {
                return Err(Error::config("coefficients.l1", "l1 must equal m1x + m1m"));
            }
        }
        Ok(())
    }

    /// Fields present in `overrides` replace those in `self`. Keeps
    /// `l1 = m1x + m1m` when only the Lipschitz constants are overridden.
    pub fn merged_with(&self, overrides: &ModelCoefficients) -> ModelCoefficients {
        let mut out = self.clone();
        macro_rules! merge {
            ($($f:ident),*) => {$(
                if overrides.$f.is_some() {
                    out.$f = overrides.$f;
                }
            )*};
        }
        coeff_fields!(merge);
        if overrides.l1.is_none() && (overrides.m1x.is_some() || overrides.m1m.is_some()) {
            out.l1 = match (out.m1x, out.m1m) {
                (Some(a), Some(b)) => Some(a + b),
                _ => None,
            };
        }
        out
    }

    pub(crate) fn require(&self, value: Option<f64>, name: &str, what: &str) -> Result<f64> {
        value.ok_or_else(|| {
            Error::Unsupported(format!(
                "coefficient `{name}` is not declared; {what} is disabled"
            ))
        })
    }
}

/// Parameters of a quadratic model whose Hamiltonian flow is solvable in
/// closed form: `V = (r/2)|x|²`, `W(x,y) = s|x−y|²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticParams {
    pub r: f64,
    pub s: f64,
}

/// An energy functional on probability measures, seen through the
/// quantities a particle sampler needs.
///
/// `force` must be a pure function of its arguments and invariant under
/// permutations of the rows of `positions` (bitwise).
pub trait MeanFieldModel: Send + Sync {
    fn space(&self) -> Space;

    fn coeffs(&self) -> &ModelCoefficients;

    /// Writes `DF(π_positions, x)` into `out` (length `d`).
    fn force(&self, positions: &Points, x: &[f64], out: &mut [f64]);

    /// Writes `∇U_N(positions)` into `out`. Implementations may share work
    /// across rows but must agree bitwise with calling [`Self::force`] row by
    /// row.
    fn force_field(&self, positions: &Points, out: &mut Points) {
        for i in 0..positions.n() {
            self.force(positions, positions.row(i), out.row_mut(i));
        }
    }

    /// `F(π_positions)`, if the model exposes its energy.
    fn energy(&self, _positions: &Points) -> Option<f64> {
        None
    }

    /// The confining part `V` of the energy, used to seed fixed-point
    /// iterations.
    fn confining_potential(&self, _x: &[f64]) -> Option<f64> {
        None
    }

    /// `U_μ(x) = δF/δm(μ, x)` for a one-dimensional grid density `μ`.
    fn linear_derivative(&self, _density: &GridDensity, _x: f64) -> Option<f64> {
        None
    }

    /// Present for models whose Hamiltonian flow is linear and solvable.
    fn quadratic_params(&self) -> Option<QuadraticParams> {
        None
    }
}

/// `∇U_N(x)`: row `i` is `DF(π_x, x_i)`.
pub fn grad_un(model: &dyn MeanFieldModel, positions: &Points) -> Result<Points> {
    let mut out = Points::zeros(positions.n(), positions.d());
    model.force_field(positions, &mut out);
    if let Some(i) = (0..out.n()).find(|&i| out.row(i).iter().any(|v| !v.is_finite())) {
        return Err(Error::domain(format!("non-finite force on particle {i}")));
    }
    Ok(out)
}

/// `U_N(x) = N F(π_x)`.
pub fn potential_un(model: &dyn MeanFieldModel, positions: &Points) -> Result<f64> {
    let f = model
        .energy(positions)
        .ok_or_else(|| Error::Unsupported("model does not expose its energy F".into()))?;
    let u = positions.n() as f64 * f;
    if !u.is_finite() {
        return Err(Error::domain("non-finite potential U_N"));
    }
    Ok(u)
}
