//! Lyapunov functions of the chain, Monte Carlo estimates of their one-step
//! drift, Gaussian moment bounds, and the moment constant `C₁`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::{
    derive_seed, refresh_velocities, verlet_step_cached, ChainParams, Observer, RngStream,
};
use crate::error::{Error, Result};
use crate::model::{
    grad_un, ExternalPotential, MeanFieldModel, ModelCoefficients, ParticleState, Points,
};
use crate::numeric::{linear_fit, mean_and_std_err, LinearFit};
use crate::theory::torus_drift_additive;

/// Which Lyapunov function to evaluate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LyapunovSpec {
    /// `Σ_i |v_i|⁶`.
    TorusV6,
    /// `Σ_i φ(z_i)³` with `φ(z) = V(x) + |v|²/2 + α x·v`.
    EuclideanPhi3 {
        alpha: f64,
        potential: ExternalPotential,
        /// Contraction rate `θ` of the affine drift bound.
        theta: f64,
        /// Additive constant `C` of the drift bound, when known.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        additive: Option<f64>,
    },
}

impl LyapunovSpec {
    /// Euclidean spec, checking `α ≤ √(c₀/2)` when `c₀` is declared.
    pub fn euclidean(
        alpha: f64,
        potential: ExternalPotential,
        theta: f64,
        additive: Option<f64>,
        coeffs: &ModelCoefficients,
    ) -> Result<Self> {
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(Error::config("lyapunov.alpha", "alpha must be nonnegative"));
        }
        if let Some(c0) = coeffs.c0 {
            if alpha > (c0 / 2.0).sqrt() {
                return Err(Error::config(
                    "lyapunov.alpha",
                    format!("alpha = {alpha} exceeds sqrt(c0/2) = {}", (c0 / 2.0).sqrt()),
                ));
            }
        }
        Ok(LyapunovSpec::EuclideanPhi3 {
            alpha,
            potential,
            theta,
            additive,
        })
    }
}

fn norm_sq(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// `φ(z) = V(x) + |v|²/2 + α x·v` for one particle.
pub fn phi(potential: &ExternalPotential, alpha: f64, x: &[f64], v: &[f64]) -> f64 {
    let xv: f64 = x.iter().zip(v).map(|(a, b)| a * b).sum();
    potential.value(x) + 0.5 * norm_sq(v) + alpha * xv
}

pub fn lyapunov_value(spec: &LyapunovSpec, state: &ParticleState) -> Result<f64> {
    match spec {
        LyapunovSpec::TorusV6 => Ok(state.velocities.rows().map(|v| norm_sq(v).powi(3)).sum()),
        LyapunovSpec::EuclideanPhi3 {
            alpha, potential, ..
        } => {
            if state.space.is_torus() {
                return Err(Error::config(
                    "lyapunov.kind",
                    "euclidean_phi3 needs a Euclidean state",
                ));
            }
            let mut total = 0.0;
            for (i, (x, v)) in state
                .positions
                .rows()
                .zip(state.velocities.rows())
                .enumerate()
            {
                let p = phi(potential, *alpha, x, v);
                if p < 0.0 {
                    return Err(Error::domain(format!(
                        "phi < 0 at particle {i}: alpha is too large for the potential"
                    )));
                }
                total += p * p * p;
            }
            Ok(total)
        }
    }
}

/// Monte Carlo estimate of `𝒫𝐕(z)` and its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelExpectation {
    pub mean: f64,
    pub std_err: f64,
    /// `𝐕(z)` at the starting state.
    pub lyapunov: f64,
}

pub const DEFAULT_DRIFT_DRAWS: usize = 10_000;

/// Averages `𝐕(Φ(𝒟(z)))` over `m_draws` refreshes. Draw `j` uses the stream
/// seeded by `derive_seed(seed, j)`, so two states estimated with the same
/// seed share their noise.
pub fn estimate_kernel_expectation(
    model: &dyn MeanFieldModel,
    state: &ParticleState,
    params: &ChainParams,
    spec: &LyapunovSpec,
    m_draws: usize,
    seed: u64,
) -> Result<KernelExpectation> {
    params.validate()?;
    if m_draws < 2 {
        return Err(Error::config("lyapunov.m_draws", "need at least two draws"));
    }
    let v0 = lyapunov_value(spec, state)?;
    let leading = grad_un(model, &state.positions)?;
    let eta = params.eta();
    let values: Vec<f64> = (0..m_draws as u64)
        .into_par_iter()
        .map(|j| {
            let mut rng = RngStream::new(derive_seed(seed, j));
            let refreshed = refresh_velocities(state, eta, &mut rng)?;
            let (next, _) = verlet_step_cached(model, &refreshed, params.h, Some(&leading))?;
            lyapunov_value(spec, &next)
        })
        .collect::<Result<_>>()?;
    let (mean, std_err) = mean_and_std_err(&values);
    Ok(KernelExpectation {
        mean,
        std_err,
        lyapunov: v0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub pv_estimate: f64,
    pub pv_std_err: f64,
    pub lyapunov: f64,
    pub rhs_bound: f64,
    pub holds: bool,
    /// `(rhs − 𝒫𝐕) / std_err`.
    pub margin_sigmas: f64,
}

/// Compares the Monte Carlo `𝒫𝐕(z)` with the explicit drift bound:
/// `(1−γh)𝐕 + Nh(766γd³ + ‖DF‖∞⁶/γ⁵)` on the torus and
/// `(1−θh)𝐕 + CNhd³` in Euclidean space (needs `C`).
pub fn estimate_kernel_drift(
    model: &dyn MeanFieldModel,
    state: &ParticleState,
    params: &ChainParams,
    spec: &LyapunovSpec,
    m_draws: usize,
    seed: u64,
) -> Result<DriftReport> {
    if m_draws < 1000 {
        return Err(Error::config(
            "lyapunov.m_draws",
            "drift estimates need at least 1000 draws",
        ));
    }
    let n = state.n() as f64;
    let d = state.d();
    let h = params.h;
    let rhs_of = |v: f64| -> Result<f64> {
        match spec {
            LyapunovSpec::TorusV6 => {
                let c = model.coeffs();
                let df_sup = c.require(c.df_sup, "df_sup", "the torus drift check")?;
                Ok((1.0 - params.gamma * h) * v
                    + n * h * torus_drift_additive(params.gamma, d, df_sup))
            }
            LyapunovSpec::EuclideanPhi3 {
                theta, additive, ..
            } => {
                let c = additive.ok_or_else(|| {
                    Error::Unsupported(
                        "the Euclidean drift constant C is not declared; use the slope test instead".into(),
                    )
                })?;
                Ok((1.0 - theta * h) * v + c * n * h * (d as f64).powi(3))
            }
        }
    };
    // Fail on missing constants before spending the Monte Carlo budget.
    rhs_of(0.0)?;
    let e = estimate_kernel_expectation(model, state, params, spec, m_draws, seed)?;
    let rhs = rhs_of(e.lyapunov)?;
    Ok(DriftReport {
        pv_estimate: e.mean,
        pv_std_err: e.std_err,
        lyapunov: e.lyapunov,
        rhs_bound: rhs,
        holds: e.mean - 3.0 * e.std_err <= rhs,
        margin_sigmas: (rhs - e.mean) / e.std_err,
    })
}

/// Affine regression of `𝒫𝐕` on `𝐕` across states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeReport {
    pub h: f64,
    pub fit: LinearFit,
    /// `1 − θh`.
    pub threshold: f64,
    /// `slope ≤ 1 − θh + 2·SE`.
    pub holds: bool,
}

pub fn drift_slope_test(
    model: &dyn MeanFieldModel,
    states: &[ParticleState],
    params: &ChainParams,
    spec: &LyapunovSpec,
    m_draws: usize,
    seed: u64,
) -> Result<SlopeReport> {
    let theta = match spec {
        LyapunovSpec::EuclideanPhi3 { theta, .. } => *theta,
        LyapunovSpec::TorusV6 => params.gamma,
    };
    if states.len() < 3 {
        return Err(Error::config(
            "lyapunov.states",
            "the slope test needs at least 3 states",
        ));
    }
    let mut xs = Vec::with_capacity(states.len());
    let mut ys = Vec::with_capacity(states.len());
    for s in states {
        let e = estimate_kernel_expectation(model, s, params, spec, m_draws, seed)?;
        xs.push(e.lyapunov);
        ys.push(e.mean);
    }
    let fit = linear_fit(&xs, &ys);
    let threshold = 1.0 - theta * params.h;
    Ok(SlopeReport {
        h: params.h,
        fit,
        threshold,
        holds: fit.slope <= threshold + 2.0 * fit.slope_std_err,
    })
}

/// Runs the slope test for each step size; the second value is the largest
/// `h` at which it passes.
pub fn drift_slope_sweep(
    model: &dyn MeanFieldModel,
    states: &[ParticleState],
    gamma: f64,
    hs: &[f64],
    spec: &LyapunovSpec,
    m_draws: usize,
    seed: u64,
) -> Result<(Vec<SlopeReport>, Option<f64>)> {
    let mut reports = Vec::with_capacity(hs.len());
    for &h in hs {
        let params = ChainParams::new(h, gamma, 1, seed)?;
        reports.push(drift_slope_test(
            model, states, &params, spec, m_draws, seed,
        )?);
    }
    let h0 = reports
        .iter()
        .filter(|r| r.holds)
        .map(|r| r.h)
        .fold(None, |acc: Option<f64>, h| {
            Some(acc.map_or(h, |a| a.max(h)))
        });
    Ok((reports, h0))
}

/// `E|G|⁶ = d(d+2)(d+4)` for `G ~ N(0, I_d)`.
pub fn sixth_moment_exact(d: usize) -> f64 {
    let d = d as f64;
    d * (d + 2.0) * (d + 4.0)
}

/// `15d³`.
pub fn sixth_moment_bound(d: usize) -> f64 {
    15.0 * (d as f64).powi(3)
}

/// `(1+ε)η⁶|w|⁶ + 87(1−η²)³d³/ε²`, valid for `ε ∈ (0, 1/10]`.
pub fn refresh_bound(eta: f64, w_norm: f64, eps: f64, d: usize) -> Result<f64> {
    if !(eps > 0.0 && eps <= 0.1) {
        return Err(Error::domain(format!(
            "eps must lie in (0, 1/10], got {eps}"
        )));
    }
    let df = d as f64;
    Ok((1.0 + eps) * eta.powi(6) * w_norm.powi(6)
        + 87.0 * (1.0 - eta * eta).powi(3) * df.powi(3) / (eps * eps))
}

/// Bound on `E[(a + b·G + c|G|²)³]`:
/// `a³ + 15d³c³ + 3a²cd + 9ac²d² + 9cd|b|² + 3a|b|²`.
pub fn quad_form_cube_bound(a: f64, b_norm: f64, c: f64, d: usize) -> f64 {
    let df = d as f64;
    let b2 = b_norm * b_norm;
    a.powi(3)
        + 15.0 * df.powi(3) * c.powi(3)
        + 3.0 * a * a * c * df
        + 9.0 * a * c * c * df * df
        + 9.0 * c * df * b2
        + 3.0 * a * b2
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "query", rename_all = "snake_case")]
pub enum GaussianMomentQuery {
    SixthMomentExact {
        d: usize,
    },
    SixthMomentBound {
        d: usize,
    },
    RefreshBound {
        eta: f64,
        w_norm: f64,
        eps: f64,
        d: usize,
    },
    QuadFormCubeBound {
        a: f64,
        b_norm: f64,
        c: f64,
        d: usize,
    },
}

pub fn gaussian_moment_tools(query: GaussianMomentQuery) -> Result<f64> {
    match query {
        GaussianMomentQuery::SixthMomentExact { d } => Ok(sixth_moment_exact(d)),
        GaussianMomentQuery::SixthMomentBound { d } => Ok(sixth_moment_bound(d)),
        GaussianMomentQuery::RefreshBound {
            eta,
            w_norm,
            eps,
            d,
        } => refresh_bound(eta, w_norm, eps, d),
        GaussianMomentQuery::QuadFormCubeBound { a, b_norm, c, d } => {
            Ok(quad_form_cube_bound(a, b_norm, c, d))
        }
    }
}

/// Particle averages `(1/N)Σ|v_i|^{2k}` and `(1/N)Σ|∇U_N(x)_i|^{2k}`,
/// `k = 1, 2, 3`, at one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentRecord {
    pub step: u64,
    pub v: [f64; 3],
    pub grad: [f64; 3],
}

impl MomentRecord {
    pub fn from_state(step: u64, state: &ParticleState, grad: &Points) -> Self {
        let n = state.n() as f64;
        let mut v = [0.0; 3];
        let mut g = [0.0; 3];
        for i in 0..state.n() {
            let a = state.velocities.row_norm_sq(i);
            let b = grad.row_norm_sq(i);
            for k in 0..3 {
                v[k] += a.powi(k as i32 + 1);
                g[k] += b.powi(k as i32 + 1);
            }
        }
        for k in 0..3 {
            v[k] /= n;
            g[k] /= n;
        }
        MomentRecord { step, v, grad: g }
    }
}

/// Collects [`MomentRecord`]s along a chain.
#[derive(Debug, Clone, Default)]
pub struct C1Observer {
    pub stride: u64,
    pub records: Vec<MomentRecord>,
}

impl C1Observer {
    pub fn new(stride: u64) -> Self {
        C1Observer {
            stride,
            records: Vec::new(),
        }
    }
}

impl Observer for C1Observer {
    fn stride(&self) -> u64 {
        self.stride
    }

    fn observe(
        &mut self,
        step: u64,
        state: &ParticleState,
        grad: &Points,
    ) -> std::result::Result<(), String> {
        self.records
            .push(MomentRecord::from_state(step, state, grad));
        Ok(())
    }
}

/// Running maximum of `(1/d³) Σ_k L_k² (mean|v|^{2k} + mean|∇U|^{2k})`
/// after each record.
pub fn c1_running_max(
    records: &[MomentRecord],
    coeffs: &ModelCoefficients,
    d: usize,
) -> Result<Vec<f64>> {
    let what = "the C1 estimate";
    let l = [
        coeffs.require(coeffs.l1, "l1", what)?,
        coeffs.require(coeffs.l2, "l2", what)?,
        coeffs.require(coeffs.l3, "l3", what)?,
    ];
    let d3 = (d as f64).powi(3);
    let mut best = 0.0f64;
    Ok(records
        .iter()
        .map(|r| {
            let s: f64 = (0..3).map(|k| l[k] * l[k] * (r.v[k] + r.grad[k])).sum();
            best = best.max(s / d3);
            best
        })
        .collect())
}

pub fn estimate_c1(records: &[MomentRecord], coeffs: &ModelCoefficients, d: usize) -> Result<f64> {
    Ok(c1_running_max(records, coeffs, d)?
        .last()
        .copied()
        .unwrap_or(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_builtin_model, ModelSpec, Space};

    fn state1(x: f64, v: f64) -> ParticleState {
        ParticleState::new(
            Points::from_scalars(&[x]),
            Points::from_scalars(&[v]),
            Space::euclidean(1),
        )
        .unwrap()
    }

    fn phi3(alpha: f64) -> LyapunovSpec {
        LyapunovSpec::EuclideanPhi3 {
            alpha,
            potential: ExternalPotential::Harmonic { stiffness: 1.0 },
            theta: 0.0,
            additive: None,
        }
    }

    #[test]
    fn lyapunov_examples() {
        let s =
            ParticleState::new(Points::zeros(3, 1), Points::zeros(3, 1), Space::torus(1)).unwrap();
        assert_eq!(lyapunov_value(&LyapunovSpec::TorusV6, &s).unwrap(), 0.0);
        assert_eq!(
            lyapunov_value(&phi3(0.5), &state1(2.0, 1.0)).unwrap(),
            42.875
        );
        assert!(lyapunov_value(&phi3(5.0), &state1(1.0, -1.0)).is_err());
    }

    #[test]
    fn phi_sandwich() {
        let mut rng = RngStream::new(11);
        let (c0, c1) = (0.5, 0.5);
        for _ in 0..100 {
            let x = 4.0 * rng.gaussian();
            let v = 4.0 * rng.gaussian();
            let p = phi(
                &ExternalPotential::Harmonic { stiffness: 1.0 },
                0.5,
                &[x],
                &[v],
            );
            assert!(c0 / 2.0 * x * x + v * v / 4.0 <= p + 1e-12);
            assert!(p <= 1.5 * c1 * x * x + 0.75 * v * v + 1e-12);
        }
    }

    #[test]
    fn euclidean_spec_rejects_large_alpha() {
        let c = ModelCoefficients {
            c0: Some(0.5),
            ..Default::default()
        };
        let v = ExternalPotential::Harmonic { stiffness: 1.0 };
        assert!(LyapunovSpec::euclidean(0.5, v.clone(), 0.01, None, &c).is_ok());
        assert!(LyapunovSpec::euclidean(0.51, v, 0.01, None, &c).is_err());
    }

    #[test]
    fn moment_identities() {
        assert_eq!(sixth_moment_exact(1), 15.0);
        assert_eq!(sixth_moment_bound(1), 15.0);
        assert_eq!(sixth_moment_exact(3), 105.0);
        assert_eq!(sixth_moment_bound(3), 405.0);
        for d in 1..20 {
            assert!(sixth_moment_exact(d) <= sixth_moment_bound(d));
        }
        assert_eq!(quad_form_cube_bound(1.0, 0.0, 0.0, 5), 1.0);
        assert!(refresh_bound(0.9, 1.0, 0.2, 1).is_err());
        assert!(refresh_bound(0.9, 1.0, 0.0, 1).is_err());
        assert!(refresh_bound(0.9, 1.0, 0.1, 1).is_ok());
    }

    #[test]
    fn c1_examples() {
        let c = ModelCoefficients {
            l1: Some(1.0),
            l2: Some(1.0),
            l3: Some(1.0),
            ..Default::default()
        };
        let zero = MomentRecord {
            step: 0,
            v: [0.0; 3],
            grad: [0.0; 3],
        };
        assert_eq!(estimate_c1(&[zero; 4], &c, 1).unwrap(), 0.0);
        let c = ModelCoefficients {
            l1: Some(1.0),
            l2: Some(0.0),
            l3: Some(0.0),
            ..Default::default()
        };
        let r = MomentRecord {
            step: 0,
            v: [2.0, 7.0, 9.0],
            grad: [1.0, 5.0, 8.0],
        };
        assert_eq!(estimate_c1(&[r], &c, 1).unwrap(), 3.0);
        assert!(estimate_c1(&[r], &ModelCoefficients::default(), 1).is_err());
    }

    #[test]
    fn zero_force_torus_drift_is_exact() {
        let m = make_builtin_model(&ModelSpec::TorusTrig { a: 0.0, b: 0.0 }, 1, None).unwrap();
        let s =
            ParticleState::new(Points::zeros(4, 1), Points::zeros(4, 1), Space::torus(1)).unwrap();
        let p = ChainParams::new(0.1, 1.0, 1, 0).unwrap();
        let r =
            estimate_kernel_drift(m.as_ref(), &s, &p, &LyapunovSpec::TorusV6, 20_000, 5).unwrap();
        let eta = p.eta();
        let exact = 4.0 * (1.0 - eta * eta).powi(3) * sixth_moment_exact(1);
        assert!((r.pv_estimate - exact).abs() < 4.0 * r.pv_std_err);
        assert!(r.holds);
    }

    #[test]
    fn drift_needs_declared_constants() {
        let m = make_builtin_model(&ModelSpec::Quadratic { r: 1.0, s: 0.0 }, 1, None).unwrap();
        let p = ChainParams::new(0.1, 1.0, 1, 0).unwrap();
        let err = estimate_kernel_drift(m.as_ref(), &state1(1.0, 1.0), &p, &phi3(0.1), 1000, 0)
            .unwrap_err();
        assert!(matches!(err, Error::Unsupported(_)));
    }
}
