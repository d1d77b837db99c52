//! The unadjusted kinetic Langevin kernel: a partial Gaussian refresh of the
//! velocities with damping `η = 1 − γh`, followed by one velocity-Verlet step
//! of the Hamiltonian `U_N(x) + |v|²/2`.

pub mod rng;

use serde::{Deserialize, Serialize};

pub use rng::{derive_seed, NoiseSource, ParticleStreams, RngStream, ZeroNoise};

use crate::error::{Error, Result};
use crate::model::{
    grad_un, MeanFieldModel, ModelCoefficients, ParticleState, Points, QuadraticParams, Space,
};
use crate::numeric::canonical_sum;

/// Step size, friction, step count and master seed of a chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainParams {
    pub h: f64,
    pub gamma: f64,
    pub n_steps: u64,
    pub seed: u64,
}

impl ChainParams {
    pub fn new(h: f64, gamma: f64, n_steps: u64, seed: u64) -> Result<Self> {
        let p = ChainParams {
            h,
            gamma,
            n_steps,
            seed,
        };
        p.validate()?;
        Ok(p)
    }

    /// Requires `h > 0`, `γ > 0` and `γh < 1`.
    pub fn validate(&self) -> Result<()> {
        if !(self.h.is_finite() && self.h > 0.0) {
            return Err(Error::config("chain.h", "step size must be positive"));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::config("chain.gamma", "friction must be positive"));
        }
        if self.gamma * self.h >= 1.0 {
            return Err(Error::config(
                "chain.h",
                format!("need h < 1/gamma (h = {}, gamma = {})", self.h, self.gamma),
            ));
        }
        Ok(())
    }

    /// Damping of the velocity refresh, always recomputed from `h` and `γ`.
    #[inline]
    pub fn eta(&self) -> f64 {
        1.0 - self.gamma * self.h
    }

    /// Warning text when `h√(M_{1,x}+M_{1,m}) > 1/10`, the step-size
    /// condition of the entropy bound. The chain still runs.
    pub fn step_size_warning(&self, coeffs: &ModelCoefficients) -> Option<String> {
        let (a, b) = (coeffs.m1x?, coeffs.m1m?);
        let lhs = self.h * (a + b).sqrt();
        (lhs > 0.1).then(|| {
            format!("h*sqrt(m1x+m1m) = {lhs:.4} exceeds 0.1; the entropy bound does not cover this step size")
        })
    }
}

/// One velocity-Verlet step:
/// `x̄ = x + hv − (h²/2)∇U_N(x)`, `v̄ = v − (h/2)(∇U_N(x) + ∇U_N(x̄))`.
pub fn verlet_step(
    model: &dyn MeanFieldModel,
    state: &ParticleState,
    h: f64,
) -> Result<ParticleState> {
    Ok(verlet_step_cached(model, state, h, None)?.0)
}

/// Verlet step that accepts the leading gradient `∇U_N(x)` when the caller
/// already has it, and returns the trailing gradient `∇U_N(x̄)` for reuse.
pub fn verlet_step_cached(
    model: &dyn MeanFieldModel,
    state: &ParticleState,
    h: f64,
    leading: Option<&Points>,
) -> Result<(ParticleState, Points)> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::config("h", "step size must be positive"));
    }
    let mut next = state.clone();
    let mut grad = match leading {
        Some(g) => g.clone(),
        None => grad_un(model, &state.positions)?,
    };
    let mut scratch = Points::zeros(state.n(), state.d());
    verlet_in_place(model, &mut next, h, &mut grad, &mut scratch)?;
    Ok((next, grad))
}

/// In-place Verlet. `grad` holds `∇U_N(x)` on entry and `∇U_N(x̄)` on exit.
fn verlet_in_place(
    model: &dyn MeanFieldModel,
    state: &mut ParticleState,
    h: f64,
    grad: &mut Points,
    scratch: &mut Points,
) -> Result<()> {
    let space = state.space;
    let half_h2 = 0.5 * h * h;
    {
        let x = state.positions.as_mut_slice();
        let v = state.velocities.as_slice();
        for ((xi, vi), gi) in x.iter_mut().zip(v).zip(grad.as_slice()) {
            *xi = space.wrap_coord(*xi + h * vi - half_h2 * gi);
        }
    }
    if !state.positions.all_finite() {
        return Err(Error::domain("non-finite position after Verlet drift"));
    }
    model.force_field(&state.positions, scratch);
    if let Some(i) = (0..scratch.n()).find(|&i| scratch.row(i).iter().any(|g| !g.is_finite())) {
        return Err(Error::domain(format!("non-finite force on particle {i}")));
    }
    let half_h = 0.5 * h;
    for ((vi, g0), g1) in state
        .velocities
        .as_mut_slice()
        .iter_mut()
        .zip(grad.as_slice())
        .zip(scratch.as_slice())
    {
        *vi -= half_h * (g0 + g1);
    }
    if !state.velocities.all_finite() {
        return Err(Error::domain("non-finite velocity after Verlet kick"));
    }
    std::mem::swap(grad, scratch);
    Ok(())
}

/// `v_i ← η v_i + √(1−η²) G_i`, Gaussians drawn particle-major,
/// coordinate-minor.
pub fn refresh_velocities(
    state: &ParticleState,
    eta: f64,
    noise: &mut dyn NoiseSource,
) -> Result<ParticleState> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::config(
            "eta",
            format!("damping must lie in (0,1), got {eta}"),
        ));
    }
    let mut next = state.clone();
    refresh_in_place(&mut next.velocities, eta, noise);
    Ok(next)
}

fn refresh_in_place(velocities: &mut Points, eta: f64, noise: &mut dyn NoiseSource) {
    let sigma = (1.0 - eta * eta).sqrt();
    for i in 0..velocities.n() {
        for v in velocities.row_mut(i) {
            *v = eta * *v + sigma * noise.gaussian(i);
        }
    }
}

/// One transition of the chain: refresh, then Verlet.
pub fn kernel_step(
    model: &dyn MeanFieldModel,
    state: &ParticleState,
    params: &ChainParams,
    noise: &mut dyn NoiseSource,
) -> Result<ParticleState> {
    params.validate()?;
    let refreshed = refresh_velocities(state, params.eta(), noise)?;
    verlet_step(model, &refreshed, params.h)
}

/// Strided read-only view of a running chain.
pub trait Observer {
    /// Observation stride in steps (`≥ 1`).
    fn stride(&self) -> u64;

    /// Called at step 0 and every `stride` steps. `grad` is `∇U_N` at the
    /// current positions.
    fn observe(
        &mut self,
        step: u64,
        state: &ParticleState,
        grad: &Points,
    ) -> std::result::Result<(), String>;
}

/// Advances `init` by `params.n_steps` kernel steps.
///
/// The trailing Verlet gradient of each step is reused as the leading
/// gradient of the next one; the refresh does not move positions, so the
/// result is bitwise identical to recomputing it.
pub fn run_chain(
    model: &dyn MeanFieldModel,
    init: &ParticleState,
    params: &ChainParams,
    observers: &mut [&mut dyn Observer],
    noise: &mut dyn NoiseSource,
) -> Result<ParticleState> {
    if let Some(w) = params.step_size_warning(model.coeffs()) {
        log::warn!("{w}");
    }
    advance(model, init, params, observers, noise)
}

/// [`run_chain`] without the step-size warning, for drivers that advance
/// many chains in short segments.
pub(crate) fn advance(
    model: &dyn MeanFieldModel,
    init: &ParticleState,
    params: &ChainParams,
    observers: &mut [&mut dyn Observer],
    noise: &mut dyn NoiseSource,
) -> Result<ParticleState> {
    params.validate()?;
    init.validate()?;
    let eta = params.eta();
    let mut state = init.clone();
    let mut grad = grad_un(model, &state.positions)?;
    let mut scratch = Points::zeros(state.n(), state.d());
    notify(observers, 0, &state, &grad)?;
    for step in 1..=params.n_steps {
        refresh_in_place(&mut state.velocities, eta, noise);
        verlet_in_place(model, &mut state, params.h, &mut grad, &mut scratch).map_err(
            |e| match e {
                Error::NumericalDomain(m) => Error::domain(format!("step {step}: {m}")),
                other => other,
            },
        )?;
        notify(observers, step, &state, &grad)?;
    }
    Ok(state)
}

fn notify(
    observers: &mut [&mut dyn Observer],
    step: u64,
    state: &ParticleState,
    grad: &Points,
) -> Result<()> {
    for obs in observers.iter_mut() {
        let stride = obs.stride().max(1);
        if step.is_multiple_of(stride) {
            obs.observe(step, state, grad)
                .map_err(|message| Error::Observer { step, message })?;
        }
    }
    Ok(())
}

/// Law of the initial positions. Velocities are always iid standard
/// Gaussian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case", deny_unknown_fields)]
pub enum PositionLaw {
    PointMass {
        at: Vec<f64>,
    },
    /// Componentwise iid `N(mean, std²)`. On the torus `wrap` must be set.
    Gaussian {
        mean: f64,
        std: f64,
        #[serde(default)]
        wrap: bool,
    },
    UniformTorus,
}

/// Draws `n` exchangeable particles: all positions first (particle-major),
/// then all velocities.
pub fn sample_initial(
    law: &PositionLaw,
    n: usize,
    space: Space,
    rng: &mut RngStream,
) -> Result<ParticleState> {
    if n == 0 {
        return Err(Error::config("n_particles", "need at least one particle"));
    }
    let d = space.dim;
    let mut positions = Points::zeros(n, d);
    match law {
        PositionLaw::PointMass { at } => {
            if at.len() != d {
                return Err(Error::config(
                    "init.at",
                    format!("expected {d} coordinates"),
                ));
            }
            let mut at = at.clone();
            space.wrap(&mut at);
            for i in 0..n {
                positions.row_mut(i).copy_from_slice(&at);
            }
        }
        PositionLaw::Gaussian { mean, std, wrap } => {
            if space.is_torus() && !wrap {
                return Err(Error::config(
                    "init.wrap",
                    "a Gaussian position law on the torus needs `wrap: true`",
                ));
            }
            if !(std.is_finite() && *std >= 0.0 && mean.is_finite()) {
                return Err(Error::config(
                    "init.std",
                    "need finite mean and nonnegative std",
                ));
            }
            for x in positions.as_mut_slice() {
                *x = space.wrap_coord(mean + std * rng.gaussian());
            }
        }
        PositionLaw::UniformTorus => {
            if !space.is_torus() {
                return Err(Error::config(
                    "init.law",
                    "uniform_torus requires a torus space",
                ));
            }
            for x in positions.as_mut_slice() {
                *x = space.wrap_coord(rng.uniform());
            }
        }
    }
    let mut velocities = Points::zeros(n, d);
    for v in velocities.as_mut_slice() {
        *v = rng.gaussian();
    }
    ParticleState::new(positions, velocities, space)
}

/// Exact Hamiltonian flow over time `t` for the quadratic model
/// `U_N = Σ (r/2)|x_i|² + (s/2N) ΣΣ |x_i − x_j|²`.
///
/// Per coordinate, the centre of mass oscillates at `√r` and deviations from
/// it at `√(r+2s)`.
pub fn exact_quadratic_flow(q: QuadraticParams, state: &ParticleState, t: f64) -> ParticleState {
    let n = state.n();
    let d = state.d();
    let omega_mean = q.r.sqrt();
    let omega_dev = (q.r + 2.0 * q.s).sqrt();
    let rotate = |x: f64, v: f64, w: f64| -> (f64, f64) {
        let (s, c) = (w * t).sin_cos();
        (x * c + v * s / w, -x * w * s + v * c)
    };
    let mut next = state.clone();
    let mut buf = vec![0.0; n];
    for k in 0..d {
        for (b, row) in buf.iter_mut().zip(state.positions.rows()) {
            *b = row[k];
        }
        let xm = canonical_sum(&mut buf) / n as f64;
        for (b, row) in buf.iter_mut().zip(state.velocities.rows()) {
            *b = row[k];
        }
        let vm = canonical_sum(&mut buf) / n as f64;
        let (xm1, vm1) = rotate(xm, vm, omega_mean);
        for i in 0..n {
            let (y, u) = rotate(
                state.positions.row(i)[k] - xm,
                state.velocities.row(i)[k] - vm,
                omega_dev,
            );
            next.positions.row_mut(i)[k] = xm1 + y;
            next.velocities.row_mut(i)[k] = vm1 + u;
        }
    }
    next
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_builtin_model, ModelSpec};

    fn scalar_state(x: f64, v: f64) -> ParticleState {
        ParticleState::new(
            Points::from_scalars(&[x]),
            Points::from_scalars(&[v]),
            Space::euclidean(1),
        )
        .unwrap()
    }

    #[test]
    fn verlet_harmonic_single_step() {
        let m = make_builtin_model(&ModelSpec::Quadratic { r: 1.0, s: 0.0 }, 1, None).unwrap();
        let out = verlet_step(m.as_ref(), &scalar_state(1.0, 0.0), 0.1).unwrap();
        assert!((out.positions.row(0)[0] - 0.995).abs() < 1e-15);
        assert!((out.velocities.row(0)[0] + 0.09975).abs() < 1e-15);
    }

    #[test]
    fn zero_force_free_flight() {
        let m = make_builtin_model(
            &ModelSpec::Pairwise {
                space: crate::model::SpaceKind::Euclidean,
                external: crate::model::ExternalPotential::Zero,
                interaction: crate::model::InteractionKernel::Zero,
            },
            1,
            None,
        )
        .unwrap();
        let out = verlet_step(m.as_ref(), &scalar_state(0.5, 2.0), 0.25).unwrap();
        assert_eq!(out.positions.row(0)[0], 1.0);
        assert_eq!(out.velocities.row(0)[0], 2.0);

        let p = ChainParams::new(0.25, 1.0, 1, 0).unwrap();
        let k = kernel_step(m.as_ref(), &scalar_state(0.5, 2.0), &p, &mut ZeroNoise).unwrap();
        let eta = p.eta();
        assert_eq!(k.positions.row(0)[0], 0.5 + 0.25 * (eta * 2.0));
        assert_eq!(k.velocities.row(0)[0], eta * 2.0);
    }

    #[test]
    fn refresh_with_zero_noise() {
        let s = scalar_state(0.0, 2.0);
        let out = refresh_velocities(&s, 0.9, &mut ZeroNoise).unwrap();
        assert_eq!(out.velocities.row(0)[0], 1.8);
        assert_eq!(out.positions, s.positions);
        assert!(refresh_velocities(&s, 1.0, &mut ZeroNoise).is_err());
    }

    #[test]
    fn params_validation_and_warning() {
        assert!(ChainParams::new(0.5, 2.0, 1, 0).is_err());
        assert!(ChainParams::new(-0.1, 1.0, 1, 0).is_err());
        let p = ChainParams::new(0.1, 1.0, 1, 0).unwrap();
        assert_eq!(p.eta(), 1.0 - 0.1);
        let c = ModelCoefficients {
            m1x: Some(1.5),
            m1m: Some(0.5),
            ..Default::default()
        };
        assert!(p.step_size_warning(&c).is_some());
        let p = ChainParams::new(0.05, 1.0, 1, 0).unwrap();
        assert!(p.step_size_warning(&c).is_none());
        assert!(p.step_size_warning(&ModelCoefficients::default()).is_none());
    }

    #[test]
    fn gaussian_init_on_torus_requires_wrap() {
        let mut rng = RngStream::new(1);
        let law = PositionLaw::Gaussian {
            mean: 0.0,
            std: 1.0,
            wrap: false,
        };
        assert!(sample_initial(&law, 4, Space::torus(1), &mut rng).is_err());
        let law = PositionLaw::Gaussian {
            mean: 0.0,
            std: 1.0,
            wrap: true,
        };
        let s = sample_initial(&law, 4, Space::torus(1), &mut rng).unwrap();
        assert!(s
            .positions
            .as_slice()
            .iter()
            .all(|x| (0.0..1.0).contains(x)));
    }

    #[test]
    fn point_mass_init() {
        let mut rng = RngStream::new(3);
        let s = sample_initial(
            &PositionLaw::PointMass { at: vec![0.0] },
            4,
            Space::euclidean(1),
            &mut rng,
        )
        .unwrap();
        assert!(s.positions.as_slice().iter().all(|&x| x == 0.0));
        assert!(s.velocities.as_slice().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn exact_flow_preserves_energy() {
        let q = QuadraticParams { r: 1.0, s: 0.25 };
        let m = make_builtin_model(&ModelSpec::Quadratic { r: 1.0, s: 0.25 }, 2, None).unwrap();
        let mut rng = RngStream::new(9);
        let s = sample_initial(
            &PositionLaw::Gaussian {
                mean: 0.3,
                std: 1.0,
                wrap: false,
            },
            5,
            Space::euclidean(2),
            &mut rng,
        )
        .unwrap();
        let h = |st: &ParticleState| {
            crate::model::potential_un(m.as_ref(), &st.positions).unwrap()
                + 0.5 * st.velocities.as_slice().iter().map(|v| v * v).sum::<f64>()
        };
        let e0 = h(&s);
        let s1 = exact_quadratic_flow(q, &s, 0.7);
        assert!((h(&s1) - e0).abs() < 1e-12 * e0.abs().max(1.0));
    }
}
