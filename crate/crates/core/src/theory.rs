//! Closed-form constants of the convergence theory for the particle chain.
//!
//! Every function evaluates its formula term by term in double precision,
//! with no algebraic simplification, so printed values can be audited
//! against the formulas in the docs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelCoefficients, QuadraticParams, Space};

/// Rate and bias constants of the entropy bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryConstants {
    pub gamma: f64,
    /// `a = γ / (7 + 3(γ+3)²)`.
    pub a: f64,
    /// `κ = a / (3 max(1, 1/ρ) + 6a)`.
    pub kappa: f64,
    /// `C₂ = (1/κ)(9 + 1/a) C₁`.
    pub c2: f64,
    pub rho: f64,
    pub delta_n: f64,
    pub c1_hat: f64,
}

fn check_nonneg(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "{name} must be finite and nonnegative, got {v}"
        )))
    }
}

fn check_pos(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "{name} must be finite and positive, got {v}"
        )))
    }
}

/// `a`, `κ` and `C₂` for friction `γ`, LSI constant `ρ` and moment constant
/// `C₁`. The LSI defect starts at 0; see [`TheoryConstants::with_delta_n`].
pub fn contraction_constants(gamma: f64, rho: f64, c1_hat: f64) -> Result<TheoryConstants> {
    check_pos("gamma", gamma)?;
    check_pos("rho", rho)?;
    check_nonneg("c1_hat", c1_hat)?;
    let a = gamma / (7.0 + 3.0 * (gamma + 3.0).powi(2));
    let kappa = a / (3.0 * f64::max(1.0, 1.0 / rho) + 6.0 * a);
    let c2 = (1.0 / kappa) * (9.0 + 1.0 / a) * c1_hat;
    debug_assert!(kappa > 0.0 && kappa < 1.0);
    Ok(TheoryConstants {
        gamma,
        a,
        kappa,
        c2,
        rho,
        delta_n: 0.0,
        c1_hat,
    })
}

impl TheoryConstants {
    pub fn with_delta_n(mut self, delta_n: f64) -> Result<Self> {
        check_nonneg("delta_n", delta_n)?;
        self.delta_n = delta_n;
        Ok(self)
    }

    /// Per-step contraction factor `(1+κh)⁻¹` of the transient.
    pub fn step_factor(&self, h: f64) -> f64 {
        1.0 / (1.0 + self.kappa * h)
    }
}

/// `(1+κh)^{−n}(H₀ + 2a I₀) + δ_N/ρ + C₂ N d³ h⁴`.
pub fn entropy_bound(
    n: u64,
    n_particles: usize,
    d: usize,
    h: f64,
    h0: f64,
    i0: f64,
    tc: &TheoryConstants,
) -> f64 {
    let transient = (-(n as f64) * (tc.kappa * h).ln_1p()).exp();
    let nf = n_particles as f64;
    let df = d as f64;
    transient * (h0 + 2.0 * tc.a * i0) + tc.delta_n / tc.rho + tc.c2 * nf * df.powi(3) * h.powi(4)
}

/// Which form of the quadratic-risk bound to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum RiskMode {
    /// `4‖f‖²(1/N + √(2H) + TV)` with `TV` the two-particle marginal distance.
    Tv2 { tv: f64 },
    /// `4‖f‖²(1/N + 2√((η_N + R H)/N))`.
    Entropy { r: f64, eta_n: f64 },
}

pub fn risk_bounds(f_sup: f64, n_particles: usize, h_mn: f64, mode: RiskMode) -> Result<f64> {
    check_nonneg("f_sup", f_sup)?;
    check_nonneg("H", h_mn)?;
    if n_particles == 0 {
        return Err(Error::domain("N must be positive"));
    }
    let nf = n_particles as f64;
    let inner = match mode {
        RiskMode::Tv2 { tv } => {
            check_nonneg("TV", tv)?;
            1.0 / nf + (2.0 * h_mn).sqrt() + tv
        }
        RiskMode::Entropy { r, eta_n } => {
            check_nonneg("R", r)?;
            check_nonneg("eta_n", eta_n)?;
            1.0 / nf + 2.0 * ((eta_n + r * h_mn) / nf).sqrt()
        }
    };
    Ok(4.0 * f_sup * f_sup * inner)
}

/// Inputs of the defective / tight log-Sobolev constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LsiConstants {
    /// Poincaré / LSI constant `ρ̄` of the one-particle Gibbs kernels.
    pub rho_bar: f64,
    /// Second-order interaction bound `M_mm`.
    pub mmm: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// Semi-convexity defect `λ ∈ [0, 1/2)`.
    pub lambda_flat: f64,
    pub alpha_n: f64,
    pub alpha_n_prime: f64,
    pub lambda_prime: f64,
    pub rho_n: f64,
}

fn default_eps() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LsiOutput {
    pub lambda_tilde: f64,
    pub delta_n: f64,
    pub rho_prime_star: Option<f64>,
    pub rho_star: Option<f64>,
    /// Why `rho_prime_star` / `rho_star` are absent, if they are.
    pub notes: Vec<String>,
    pub r_entropy: f64,
    pub eta_n: f64,
}

pub fn lsi_constants(lc: &LsiConstants, n_particles: usize, d: usize) -> Result<LsiOutput> {
    check_pos("rho_bar", lc.rho_bar)?;
    check_nonneg("mmm", lc.mmm)?;
    check_nonneg("alpha_n", lc.alpha_n)?;
    check_nonneg("alpha_n_prime", lc.alpha_n_prime)?;
    check_nonneg("lambda_prime", lc.lambda_prime)?;
    check_pos("rho_n", lc.rho_n)?;
    if !(lc.eps > 0.0 && lc.eps < 1.0) {
        return Err(Error::domain(format!(
            "eps must lie in (0,1), got {}",
            lc.eps
        )));
    }
    if !(lc.lambda_flat >= 0.0) {
        return Err(Error::domain("lambda must be nonnegative"));
    }
    if lc.lambda_flat >= 0.5 {
        return Err(Error::TheoremInapplicable(format!(
            "LSI constants need lambda < 1/2, got {}",
            lc.lambda_flat
        )));
    }
    let (rb, m, eps, lam) = (lc.rho_bar, lc.mmm, lc.eps, lc.lambda_flat);
    let nf = n_particles as f64;
    let df = d as f64;
    let lambda_tilde = (2.0 * m / rb) * (4.0 + 3.0 * m / (2.0 * rb * eps));
    let delta_n = 4.0
        * rb
        * (1.0 - eps)
        * (2.0 * lc.alpha_n + (m * df / rb) * (5.0 / 2.0 + 3.0 * m / (4.0 * rb * eps)));
    let mut notes = Vec::new();
    let threshold = lambda_tilde / (1.0 - 2.0 * lam);
    let rho_prime_star = if nf > threshold {
        Some(2.0 * (1.0 - eps) * (1.0 - 2.0 * lam - lambda_tilde / nf) * rb)
    } else {
        notes.push(format!("rho_prime_star needs N > {threshold}"));
        None
    };
    let gap = lc.rho_n - lc.lambda_prime - m / nf;
    let rho_star = match rho_prime_star {
        Some(rp) if gap > 0.0 => Some(rp * (1.0 + delta_n / (4.0 * gap)).recip()),
        Some(_) => {
            notes.push(format!(
                "rho_star needs rho_N - lambda' - M/N > 0, got {gap}"
            ));
            None
        }
        None => None,
    };
    Ok(LsiOutput {
        lambda_tilde,
        delta_n,
        rho_prime_star,
        rho_star,
        notes,
        r_entropy: 1.0 / (1.0 - lam),
        eta_n: (lc.alpha_n + lc.alpha_n_prime) / (1.0 - lam),
    })
}

/// Constants of the Euclidean Lyapunov function
/// `Σ_i (V(x_i) + |v_i|²/2 + α x_i·v_i)³`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EuclideanLyapunov {
    pub alpha: f64,
    pub theta: f64,
    pub lambda0: f64,
}

/// `α = min(γ/2 (2γ²/r + 19/12)⁻¹, √(c₀/2))`, `θ = ½ min(αr/(5c₁), γ)`,
/// `λ₀ = min(r/3, 2α/3, rαc₀²/(176(1+α)³), (2θ/(1+α))(16/(c₀³N) + 2)⁻¹)`.
pub fn euclidean_lyapunov_constants(
    gamma: f64,
    r: f64,
    c0: f64,
    c1: f64,
    n_particles: usize,
) -> Result<EuclideanLyapunov> {
    check_pos("gamma", gamma)?;
    check_pos("r", r)?;
    check_pos("c0", c0)?;
    check_pos("c1", c1)?;
    if n_particles == 0 {
        return Err(Error::domain("N must be positive"));
    }
    let nf = n_particles as f64;
    let alpha = f64::min(
        (gamma / 2.0) * (2.0 * gamma * gamma / r + 19.0 / 12.0).recip(),
        (c0 / 2.0).sqrt(),
    );
    let theta = 0.5 * f64::min(alpha * r / (5.0 * c1), gamma);
    let lambda0 = [
        r / 3.0,
        2.0 * alpha / 3.0,
        r * alpha * c0 * c0 / (176.0 * (1.0 + alpha).powi(3)),
        (2.0 * theta / (1.0 + alpha)) * (16.0 / (c0.powi(3) * nf) + 2.0).recip(),
    ]
    .into_iter()
    .fold(f64::INFINITY, f64::min);
    Ok(EuclideanLyapunov {
        alpha,
        theta,
        lambda0,
    })
}

/// `766γd³ + ‖DF‖∞⁶/γ⁵`: the torus drift constant per unit `Nh`.
pub fn torus_drift_additive(gamma: f64, d: usize, df_sup: f64) -> f64 {
    766.0 * gamma * (d as f64).powi(3) + df_sup.powi(6) / gamma.powi(5)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "space", rename_all = "snake_case")]
pub enum LyapunovConstants {
    Euclidean(EuclideanLyapunov),
    Torus { additive_per_nh: f64 },
}

pub fn lyapunov_constants(
    space: Space,
    gamma: f64,
    coeffs: &ModelCoefficients,
    n_particles: usize,
) -> Result<LyapunovConstants> {
    if space.is_torus() {
        let df_sup = coeffs.require(coeffs.df_sup, "df_sup", "the torus drift constant")?;
        check_pos("gamma", gamma)?;
        Ok(LyapunovConstants::Torus {
            additive_per_nh: torus_drift_additive(gamma, space.dim, df_sup),
        })
    } else {
        let what = "the Euclidean Lyapunov constants";
        let r = coeffs.require(coeffs.r_conf, "r_conf", what)?;
        let c0 = coeffs.require(coeffs.c0, "c0", what)?;
        let c1 = coeffs.require(coeffs.c1, "c1", what)?;
        euclidean_lyapunov_constants(gamma, r, c0, c1, n_particles)
            .map(LyapunovConstants::Euclidean)
    }
}

/// Relative entropy and relative Fisher information of the product law
/// `N(m, σ²)^{⊗Nd} ⊗ N(0, I)` with respect to `exp(−U_N(x) − |v|²/2)` for
/// the quadratic model.
///
/// Per coordinate, the target precision has eigenvalue `r` on the
/// centre-of-mass direction and `r + 2s` on its `N−1` complements.
pub fn gaussian_init_h0_i0(
    q: QuadraticParams,
    n_particles: usize,
    d: usize,
    mean: f64,
    std: f64,
) -> Result<(f64, f64)> {
    check_pos("std", std)?;
    check_pos("r", q.r)?;
    check_nonneg("s", q.s)?;
    if n_particles == 0 {
        return Err(Error::domain("N must be positive"));
    }
    let nf = n_particles as f64;
    let var = std * std;
    let eig = [(q.r, 1.0), (q.r + 2.0 * q.s, nf - 1.0)];
    let mut h0 = 0.0;
    let mut i0 = 0.0;
    for (lam, mult) in eig {
        // KL(N(0, σ²) | N(0, 1/λ)) and E|(λ − 1/σ²) X|² with X ~ N(0, σ²).
        h0 += mult * 0.5 * (lam * var - 1.0 - (lam * var).ln());
        i0 += mult * (lam - 1.0 / var).powi(2) * var;
    }
    // The mean offset lives entirely on the centre-of-mass direction.
    h0 += 0.5 * q.r * nf * mean * mean;
    i0 += q.r * q.r * nf * mean * mean;
    Ok((h0 * d as f64, i0 * d as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn contraction_constants_gamma_one() {
        let tc = contraction_constants(1.0, 1.0, 1.0).unwrap();
        assert!((tc.a - 1.0 / 55.0).abs() < 1e-15);
        assert!((tc.kappa - 1.0 / 171.0).abs() < 1e-15);
        assert!((tc.c2 - 10944.0).abs() < 1e-9);
        let tc10 = contraction_constants(1.0, 10.0, 1.0).unwrap();
        assert_eq!(tc.kappa, tc10.kappa);
    }

    #[test]
    fn a_and_kappa_increase_in_gamma() {
        let mut prev = (0.0, 0.0);
        for k in 1..=300 {
            let g = k as f64 * 0.01;
            let tc = contraction_constants(g, 1.0, 0.0).unwrap();
            assert!(tc.a > prev.0 && tc.kappa > prev.1);
            assert!(tc.kappa > 0.0 && tc.kappa < 1.0);
            prev = (tc.a, tc.kappa);
        }
        // Nonincreasing in 1/ρ.
        let mut prev = 0.0;
        for k in 1..=100 {
            let rho = k as f64 * 0.05;
            let kappa = contraction_constants(1.0, rho, 0.0).unwrap().kappa;
            assert!(kappa >= prev);
            prev = kappa;
        }
    }

    #[test]
    fn entropy_bound_examples() {
        let tc = contraction_constants(1.0, 1.0, 1.0)
            .unwrap()
            .with_delta_n(0.3)
            .unwrap();
        let floor = 0.3 + 10944.0 * 4.0 * 8.0 * 0.1f64.powi(4);
        assert!((entropy_bound(u64::MAX, 4, 2, 0.1, 5.0, 5.0, &tc) - floor).abs() < 1e-12);
        let tc0 = contraction_constants(1.0, 1.0, 1.0).unwrap();
        assert_eq!(
            entropy_bound(7, 4, 2, 0.1, 0.0, 0.0, &tc0),
            10944.0 * 4.0 * 8.0 * 0.1f64.powi(4)
        );
        let factor = entropy_bound(
            1710,
            1,
            1,
            0.1,
            1.0,
            0.0,
            &contraction_constants(1.0, 1.0, 0.0).unwrap(),
        );
        assert!((factor - (-1.0f64).exp()).abs() < 1e-3);
        let mut prev = f64::INFINITY;
        for n in 0..=10_000u64 {
            let b = entropy_bound(n, 4, 1, 0.05, 2.0, 3.0, &tc);
            assert!(b <= prev);
            prev = b;
        }
    }

    #[test]
    fn risk_bound_examples() {
        let b = risk_bounds(1.0, 100, 0.0, RiskMode::Tv2 { tv: 0.0 }).unwrap();
        assert!((b - 0.04).abs() < 1e-15);
        let b = risk_bounds(1.0, 100, 0.02, RiskMode::Tv2 { tv: 0.01 }).unwrap();
        assert!((b - 0.88).abs() < 1e-12);
        let b = risk_bounds(1.0, 100, 0.5, RiskMode::Entropy { r: 2.0, eta_n: 1.0 }).unwrap();
        assert!((b - 4.0 * (0.01 + 2.0 * 0.02f64.sqrt())).abs() < 1e-12);
        assert!((b - 1.1714).abs() < 1e-4);
        assert!(risk_bounds(-1.0, 10, 0.0, RiskMode::Tv2 { tv: 0.0 }).is_err());
        for mode in [
            RiskMode::Tv2 { tv: 0.1 },
            RiskMode::Entropy { r: 1.5, eta_n: 0.2 },
        ] {
            let mut prev = f64::INFINITY;
            for n in 1..500 {
                let b = risk_bounds(2.0, n, 0.1, mode).unwrap();
                assert!(b <= prev);
                prev = b;
            }
        }
    }

    fn lsi_example() -> LsiConstants {
        LsiConstants {
            rho_bar: 1.0,
            mmm: 1.0,
            eps: 0.5,
            lambda_flat: 0.0,
            alpha_n: 0.0,
            alpha_n_prime: 0.0,
            lambda_prime: 0.0,
            rho_n: 1.0,
        }
    }

    #[test]
    fn lsi_worked_example() {
        let out = lsi_constants(&lsi_example(), 100, 1).unwrap();
        assert!((out.lambda_tilde - 14.0).abs() < 1e-12);
        assert!((out.delta_n - 8.0).abs() < 1e-12);
        assert!((out.rho_prime_star.unwrap() - 0.86).abs() < 1e-12);
        assert!(out.rho_star.unwrap() <= out.rho_prime_star.unwrap());
        assert_eq!(out.r_entropy, 1.0);
        assert_eq!(out.eta_n, 0.0);
    }

    #[test]
    fn lsi_degenerate_and_errors() {
        let mut lc = lsi_example();
        lc.mmm = 0.0;
        lc.alpha_n = 0.2;
        lc.lambda_flat = 0.1;
        let out = lsi_constants(&lc, 10, 3).unwrap();
        assert_eq!(out.lambda_tilde, 0.0);
        assert!((out.delta_n - 8.0 * 0.5 * 0.2).abs() < 1e-15);
        assert!((out.rho_prime_star.unwrap() - 2.0 * 0.5 * 0.8).abs() < 1e-15);

        let out = lsi_constants(&lsi_example(), 10, 1).unwrap();
        assert!(out.rho_prime_star.is_none() && !out.notes.is_empty());

        let mut lc = lsi_example();
        lc.lambda_flat = 0.5;
        assert!(matches!(
            lsi_constants(&lc, 100, 1),
            Err(Error::TheoremInapplicable(_))
        ));
    }

    #[test]
    fn lsi_defect_linear_in_d() {
        let mut lc = lsi_example();
        lc.alpha_n = 0.7;
        let part = |d| {
            lsi_constants(&lc, 100, d).unwrap().delta_n
                - 8.0 * lc.rho_bar * (1.0 - lc.eps) * lc.alpha_n
        };
        assert!((part(6) / part(3) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn euclidean_lyapunov_worked_example() {
        let c = euclidean_lyapunov_constants(1.0, 1.0, 0.5, 0.5, 1).unwrap();
        assert!((c.alpha - 6.0 / 43.0).abs() < 1e-15);
        assert!((c.theta - 6.0 / 215.0).abs() < 1e-15);
        assert!(((c.alpha - 1.0 / 7.0) / c.alpha).abs() < 0.03);
        assert!(((c.theta - 1.0 / 35.0) / c.theta).abs() < 0.03);
        assert!(c.lambda0 >= 2.0 / 15713.0);
        assert!((c.lambda0 - 1.334e-4).abs() < 1e-6);
        let mut prev = 0.0;
        for n in 1..2000 {
            let l = euclidean_lyapunov_constants(1.0, 1.0, 0.5, 0.5, n)
                .unwrap()
                .lambda0;
            assert!(l >= prev);
            assert!(c.alpha <= (0.5f64 / 2.0).sqrt());
            prev = l;
        }
    }

    #[test]
    fn torus_constant() {
        let c = lyapunov_constants(
            Space::torus(1),
            1.0,
            &ModelCoefficients {
                df_sup: Some(0.0),
                ..Default::default()
            },
            8,
        )
        .unwrap();
        assert_eq!(
            c,
            LyapunovConstants::Torus {
                additive_per_nh: 766.0
            }
        );
        assert!(matches!(
            lyapunov_constants(Space::torus(1), 1.0, &ModelCoefficients::default(), 8),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn gaussian_init_at_target_has_zero_entropy() {
        let q = QuadraticParams { r: 1.0, s: 0.0 };
        let (h0, i0) = gaussian_init_h0_i0(q, 5, 2, 0.0, 1.0).unwrap();
        assert!(h0.abs() < 1e-15 && i0.abs() < 1e-15);
        let (h0, i0) = gaussian_init_h0_i0(q, 1, 1, 1.0, 1.0).unwrap();
        assert!((h0 - 0.5).abs() < 1e-15 && (i0 - 1.0).abs() < 1e-15);
    }
}
