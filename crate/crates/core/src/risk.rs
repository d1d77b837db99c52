//! Monte Carlo estimators: quadratic risk over replicas, particle moments,
//! binned divergences against grid densities, geometric rate fits and a
//! coupled estimate of the stationary bias.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::{
    advance, exact_quadratic_flow, sample_initial, verlet_step_cached, ChainParams, Observer,
    PositionLaw, RngStream,
};
use crate::error::{Error, Result};
use crate::model::{grad_un, MeanFieldModel, ParticleState, Points};
use crate::numeric::{batch_means, linear_fit, mean_and_std_err, pairwise_mean, pairwise_sum};
use crate::oracle::GridDensity;

/// Scalar test functions of one particle position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Observable {
    Constant {
        value: f64,
    },
    /// First coordinate.
    Coordinate,
    /// `|x|^p` (unbounded).
    Moment {
        power: i32,
    },
    /// `min(max(|x|², lo), hi)`.
    ClampedSquare {
        lo: f64,
        hi: f64,
    },
    /// `cos(2π k x₁)`.
    Cosine {
        k: f64,
    },
}

impl Observable {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match *self {
            Observable::Constant { value } => value,
            Observable::Coordinate => x[0],
            Observable::Moment { power } => x.iter().map(|c| c * c).sum::<f64>().sqrt().powi(power),
            Observable::ClampedSquare { lo, hi } => {
                x.iter().map(|c| c * c).sum::<f64>().clamp(lo, hi)
            }
            Observable::Cosine { k } => (2.0 * std::f64::consts::PI * k * x[0]).cos(),
        }
    }

    /// `sup |f|`, when finite.
    pub fn sup_norm(&self) -> Option<f64> {
        match *self {
            Observable::Constant { value } => Some(value.abs()),
            Observable::ClampedSquare { lo, hi } => Some(lo.abs().max(hi.abs())),
            Observable::Cosine { .. } => Some(1.0),
            Observable::Coordinate | Observable::Moment { .. } => None,
        }
    }

    /// Particle average `(1/N)Σ f(x_i)`.
    pub fn empirical_mean(&self, positions: &Points) -> f64 {
        let vals: Vec<f64> = positions.rows().map(|x| self.eval(x)).collect();
        pairwise_mean(&vals)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskEstimate {
    /// Mean over replicas of `((1/N)Σf(X_i) − μ(f))²`.
    pub value: f64,
    pub std_err: f64,
    pub reps: usize,
    pub observable: Observable,
    pub n_steps: u64,
    pub n_particles: usize,
    pub h: f64,
    pub gamma: f64,
    pub seed: u64,
    pub oracle_mean: f64,
}

/// Replica `k` draws its initial state and its noise from
/// `RngStream::for_replica(params.seed, k)`.
pub fn replica_final_states(
    model: &dyn MeanFieldModel,
    params: &ChainParams,
    n_particles: usize,
    reps: usize,
    init: &PositionLaw,
) -> Result<Vec<ParticleState>> {
    if let Some(w) = params.step_size_warning(model.coeffs()) {
        log::warn!("{w}");
    }
    (0..reps as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = RngStream::for_replica(params.seed, k);
            let s0 = sample_initial(init, n_particles, model.space(), &mut rng)?;
            advance(model, &s0, params, &mut [], &mut rng)
        })
        .collect()
}

pub fn quadratic_risk(
    model: &dyn MeanFieldModel,
    f: &Observable,
    params: &ChainParams,
    n_particles: usize,
    reps: usize,
    oracle_mean: f64,
    init: &PositionLaw,
) -> Result<RiskEstimate> {
    if reps < 8 {
        return Err(Error::config("risk.reps", "need at least 8 replicas"));
    }
    let finals = replica_final_states(model, params, n_particles, reps, init)?;
    Ok(risk_from_final_states(&finals, f, params, oracle_mean))
}

/// Quadratic risk of already simulated replicas.
pub fn risk_from_final_states(
    finals: &[ParticleState],
    f: &Observable,
    params: &ChainParams,
    oracle_mean: f64,
) -> RiskEstimate {
    let sq: Vec<f64> = finals
        .iter()
        .map(|s| {
            let e = f.empirical_mean(&s.positions) - oracle_mean;
            e * e
        })
        .collect();
    let (value, std_err) = mean_and_std_err(&sq);
    RiskEstimate {
        value,
        std_err,
        reps: finals.len(),
        observable: f.clone(),
        n_steps: params.n_steps,
        n_particles: finals.first().map_or(0, |s| s.n()),
        h: params.h,
        gamma: params.gamma,
        seed: params.seed,
        oracle_mean,
    }
}

/// Particle moments at one step: `(1/N)Σ|x_i|^p` and `(1/N)Σ|v_i|^p` for
/// each requested order `p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentSnapshot {
    pub step: u64,
    pub x: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentSeries {
    pub orders: Vec<u32>,
    pub snapshots: Vec<MomentSnapshot>,
    /// Running maxima, aligned with `snapshots`.
    pub running_max_x: Vec<Vec<f64>>,
    pub running_max_v: Vec<Vec<f64>>,
}

fn particle_moment(points: &Points, p: u32) -> f64 {
    let vals: Vec<f64> = (0..points.n())
        .map(|i| points.row_norm_sq(i).sqrt().powi(p as i32))
        .collect();
    pairwise_mean(&vals)
}

pub fn moment_snapshot(step: u64, state: &ParticleState, orders: &[u32]) -> MomentSnapshot {
    MomentSnapshot {
        step,
        x: orders
            .iter()
            .map(|&p| particle_moment(&state.positions, p))
            .collect(),
        v: orders
            .iter()
            .map(|&p| particle_moment(&state.velocities, p))
            .collect(),
    }
}

fn check_orders(orders: &[u32]) -> Result<()> {
    if orders.is_empty() || orders.iter().any(|p| ![2, 4, 6].contains(p)) {
        return Err(Error::config(
            "moments.orders",
            "orders must be a nonempty subset of {2, 4, 6}",
        ));
    }
    Ok(())
}

impl MomentSeries {
    pub fn new(orders: &[u32]) -> Result<Self> {
        check_orders(orders)?;
        Ok(MomentSeries {
            orders: orders.to_vec(),
            snapshots: Vec::new(),
            running_max_x: Vec::new(),
            running_max_v: Vec::new(),
        })
    }

    pub fn push(&mut self, snap: MomentSnapshot) {
        let mx = match self.running_max_x.last() {
            Some(prev) => prev.iter().zip(&snap.x).map(|(a, b)| a.max(*b)).collect(),
            None => snap.x.clone(),
        };
        let mv = match self.running_max_v.last() {
            Some(prev) => prev.iter().zip(&snap.v).map(|(a, b)| a.max(*b)).collect(),
            None => snap.v.clone(),
        };
        self.running_max_x.push(mx);
        self.running_max_v.push(mv);
        self.snapshots.push(snap);
    }
}

/// Moments of a stream of `(step, state)` pairs.
pub fn empirical_moments<'a>(
    states: impl IntoIterator<Item = (u64, &'a ParticleState)>,
    orders: &[u32],
) -> Result<MomentSeries> {
    let mut series = MomentSeries::new(orders)?;
    for (step, s) in states {
        series.push(moment_snapshot(step, s, orders));
    }
    Ok(series)
}

/// Records [`MomentSnapshot`]s along a chain.
#[derive(Debug, Clone)]
pub struct MomentObserver {
    pub stride: u64,
    pub series: MomentSeries,
}

impl MomentObserver {
    pub fn new(stride: u64, orders: &[u32]) -> Result<Self> {
        Ok(MomentObserver {
            stride,
            series: MomentSeries::new(orders)?,
        })
    }
}

impl Observer for MomentObserver {
    fn stride(&self) -> u64 {
        self.stride
    }

    fn observe(
        &mut self,
        step: u64,
        state: &ParticleState,
        _grad: &Points,
    ) -> std::result::Result<(), String> {
        let orders = self.series.orders.clone();
        self.series.push(moment_snapshot(step, state, &orders));
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DivergenceKind {
    Kl,
    Tv,
}

/// Number of bins: fixed, or Sturges' rule `⌈log₂ n⌉ + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinCount {
    Fixed(usize),
    Sturges,
}

impl Default for BinCount {
    fn default() -> Self {
        BinCount::Fixed(50)
    }
}

impl BinCount {
    pub fn resolve(self, n_samples: usize) -> usize {
        match self {
            BinCount::Fixed(b) => b,
            BinCount::Sturges => (n_samples.max(1) as f64).log2().ceil() as usize + 1,
        }
    }
}

/// Histogram layout: `n_bins` equal bins on `range` (the reference's own
/// domain by default). Samples outside the range fall into the edge bins,
/// and so does the reference mass outside it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct HistogramSpec {
    #[serde(default)]
    pub bins: BinCount,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub kind: DivergenceKind,
    pub value: f64,
    /// Set when some bin has samples but zero reference mass (`value` is
    /// then `+∞`).
    pub infinite: bool,
    /// Samples that fell outside the histogram range.
    pub clipped: usize,
    pub n_bins: usize,
}

/// Histogram of `samples` on `n_bins` bins of `[lo, hi]`; returns the bin
/// frequencies and the count of clipped samples.
pub fn histogram(samples: &[f64], lo: f64, hi: f64, n_bins: usize) -> (Vec<f64>, usize) {
    let mut counts = vec![0usize; n_bins];
    let mut clipped = 0;
    let w = (hi - lo) / n_bins as f64;
    for &x in samples {
        if !(lo..=hi).contains(&x) {
            clipped += 1;
        }
        let b = ((x - lo) / w).floor();
        let b = if b.is_nan() || b < 0.0 {
            0
        } else {
            (b as usize).min(n_bins - 1)
        };
        counts[b] += 1;
    }
    let n = samples.len().max(1) as f64;
    (counts.into_iter().map(|c| c as f64 / n).collect(), clipped)
}

/// Reference mass of each bin, with the tails folded into the edge bins.
pub fn reference_bin_masses(reference: &GridDensity, lo: f64, hi: f64, n_bins: usize) -> Vec<f64> {
    let w = (hi - lo) / n_bins as f64;
    (0..n_bins)
        .map(|b| {
            let a = if b == 0 {
                f64::NEG_INFINITY
            } else {
                lo + b as f64 * w
            };
            let c = if b + 1 == n_bins {
                f64::INFINITY
            } else {
                lo + (b + 1) as f64 * w
            };
            reference.interval_mass(a, c)
        })
        .collect()
}

/// `Σ p log(p/q)` (bins with `p = 0` contribute 0) or `½Σ|p − q|`.
pub fn discrete_divergence(p: &[f64], q: &[f64], kind: DivergenceKind) -> (f64, bool) {
    match kind {
        DivergenceKind::Tv => {
            let terms: Vec<f64> = p.iter().zip(q).map(|(a, b)| (a - b).abs()).collect();
            (0.5 * pairwise_sum(&terms), false)
        }
        DivergenceKind::Kl => {
            if p.iter().zip(q).any(|(a, b)| *a > 0.0 && *b <= 0.0) {
                return (f64::INFINITY, true);
            }
            let terms: Vec<f64> = p
                .iter()
                .zip(q)
                .map(|(a, b)| if *a > 0.0 { a * (a / b).ln() } else { 0.0 })
                .collect();
            (pairwise_sum(&terms).max(0.0), false)
        }
    }
}

pub fn histogram_divergence(
    samples: &[f64],
    reference: &GridDensity,
    spec: &HistogramSpec,
    kind: DivergenceKind,
) -> Result<Divergence> {
    let n_bins = spec.bins.resolve(samples.len());
    if n_bins < 10 {
        return Err(Error::config("histogram.bins", "need at least 10 bins"));
    }
    if samples.is_empty() {
        return Err(Error::config("histogram", "no samples"));
    }
    let (lo, hi) = spec.range.unwrap_or((reference.lo(), reference.hi()));
    if !(hi > lo) {
        return Err(Error::config("histogram.range", "need lo < hi"));
    }
    let (p, clipped) = histogram(samples, lo, hi, n_bins);
    let q = reference_bin_masses(reference, lo, hi, n_bins);
    let (value, infinite) = discrete_divergence(&p, &q, kind);
    Ok(Divergence {
        kind,
        value,
        infinite,
        clipped,
        n_bins,
    })
}

/// Divergence of the joint `(x, v)` histogram of scalar particles from the
/// product `reference ⊗ N(0, 1)`, on `n_bins × n_bins` bins.
pub fn phase_space_divergence(
    xs: &[f64],
    vs: &[f64],
    reference: &GridDensity,
    x_range: (f64, f64),
    v_range: (f64, f64),
    n_bins: usize,
    kind: DivergenceKind,
) -> Result<Divergence> {
    if xs.len() != vs.len() || xs.is_empty() {
        return Err(Error::config(
            "histogram",
            "need equally many positions and velocities",
        ));
    }
    if n_bins < 10 {
        return Err(Error::config("histogram.bins", "need at least 10 bins"));
    }
    let bin_of = |x: f64, (lo, hi): (f64, f64)| -> (usize, bool) {
        let inside = (lo..=hi).contains(&x);
        let b = ((x - lo) / ((hi - lo) / n_bins as f64)).floor();
        let b = if b.is_nan() || b < 0.0 {
            0
        } else {
            (b as usize).min(n_bins - 1)
        };
        (b, !inside)
    };
    let mut counts = vec![0usize; n_bins * n_bins];
    let mut clipped = 0;
    for (&x, &v) in xs.iter().zip(vs) {
        let (bx, cx) = bin_of(x, x_range);
        let (bv, cv) = bin_of(v, v_range);
        clipped += (cx || cv) as usize;
        counts[bx * n_bins + bv] += 1;
    }
    let n = xs.len() as f64;
    let p: Vec<f64> = counts.into_iter().map(|c| c as f64 / n).collect();
    let qx = reference_bin_masses(reference, x_range.0, x_range.1, n_bins);
    let qv = reference_bin_masses(&standard_normal_grid()?, v_range.0, v_range.1, n_bins);
    let q: Vec<f64> = qx
        .iter()
        .flat_map(|a| qv.iter().map(move |b| a * b))
        .collect();
    let (value, infinite) = discrete_divergence(&p, &q, kind);
    Ok(Divergence {
        kind,
        value,
        infinite,
        clipped,
        n_bins: n_bins * n_bins,
    })
}

/// `N(0, 1)` on `[−8, 8]` with 4001 cells.
pub fn standard_normal_grid() -> Result<GridDensity> {
    let n = 4001;
    let dx = 16.0 / n as f64;
    let w = (0..n)
        .map(|j| {
            let x = -8.0 + (j as f64 + 0.5) * dx;
            (-0.5 * x * x).exp()
        })
        .collect();
    GridDensity::from_weights(-8.0, 8.0, false, w)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometricFit {
    /// `exp(slope)` of `log(series)` against the index.
    pub rate: f64,
    pub r_squared: f64,
    pub slope: f64,
    pub slope_std_err: f64,
}

pub fn fit_geometric_rate(series: &[f64]) -> Result<GeometricFit> {
    if series.len() < 10 {
        return Err(Error::config("series", "need at least 10 points"));
    }
    if let Some(i) = series.iter().position(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::domain(format!(
            "series entry {i} is not positive: {}",
            series[i]
        )));
    }
    let xs: Vec<f64> = (0..series.len()).map(|i| i as f64).collect();
    let ys: Vec<f64> = series.iter().map(|v| v.ln()).collect();
    let fit = linear_fit(&xs, &ys);
    Ok(GeometricFit {
        rate: fit.slope.exp(),
        r_squared: fit.r_squared,
        slope: fit.slope,
        slope_std_err: fit.slope_std_err,
    })
}

/// Start and (exclusive) end of the decaying part of a series: from its
/// maximum up to the first value below `floor_factor` times the noise floor,
/// the floor being the mean of the last quarter.
pub fn decaying_segment(series: &[f64], floor_factor: f64) -> (usize, usize) {
    if series.is_empty() {
        return (0, 0);
    }
    let start = series
        .iter()
        .enumerate()
        .fold(0, |best, (i, v)| if *v > series[best] { i } else { best });
    let tail = &series[series.len() - (series.len() / 4).max(1)..];
    let floor = pairwise_mean(tail);
    let end = (start..series.len())
        .find(|&i| series[i] < floor_factor * floor)
        .unwrap_or(series.len());
    (start, end)
}

/// Stationary bias estimate from two synchronously coupled chains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoupledBias {
    /// Time average of `f̄(Verlet chain) − f̄(exact-flow chain)`.
    pub bias: f64,
    pub std_err: f64,
    /// Time average of `f̄` along the Verlet chain alone, with its
    /// batch-means standard error.
    pub chain_mean: f64,
    pub chain_std_err: f64,
    pub samples: u64,
}

/// Runs the chain next to a comparator that uses the same refresh noise but
/// replaces the Verlet step by the exact Hamiltonian flow over time `h`. The
/// comparator leaves `exp(−U_N − |v|²/2)` invariant, so the time average of
/// the difference of the particle averages of `f` estimates the stationary
/// bias of the chain with far less noise than either chain alone.
///
/// Requires a model whose flow is known in closed form.
pub fn coupled_stationary_bias(
    model: &dyn MeanFieldModel,
    f: &Observable,
    params: &ChainParams,
    n_particles: usize,
    init: &PositionLaw,
    burn_in: u64,
    batches: usize,
) -> Result<CoupledBias> {
    params.validate()?;
    let q = model.quadratic_params().ok_or_else(|| {
        Error::Unsupported("the coupled bias estimate needs a model with a closed-form flow".into())
    })?;
    if params.n_steps <= burn_in {
        return Err(Error::config(
            "chain.n_steps",
            "n_steps must exceed the burn-in",
        ));
    }
    let mut rng = RngStream::new(params.seed);
    let init = sample_initial(init, n_particles, model.space(), &mut rng)?;
    let mut a = init.clone();
    let mut b = init;
    let mut grad = grad_un(model, &a.positions)?;
    let eta = params.eta();
    let sigma = (1.0 - eta * eta).sqrt();
    let kept = (params.n_steps - burn_in) as usize;
    let mut diffs = Vec::with_capacity(kept);
    let mut fa = Vec::with_capacity(kept);
    for step in 1..=params.n_steps {
        for i in 0..n_particles {
            for k in 0..a.d() {
                let g = rng.gaussian();
                let va = &mut a.velocities.row_mut(i)[k];
                *va = eta * *va + sigma * g;
                let vb = &mut b.velocities.row_mut(i)[k];
                *vb = eta * *vb + sigma * g;
            }
        }
        let (na, ng) = verlet_step_cached(model, &a, params.h, Some(&grad))?;
        a = na;
        grad = ng;
        b = exact_quadratic_flow(q, &b, params.h);
        if step > burn_in {
            let x = f.empirical_mean(&a.positions);
            fa.push(x);
            diffs.push(x - f.empirical_mean(&b.positions));
        }
    }
    let (bias, std_err) = batch_means(&diffs, batches);
    let (chain_mean, chain_std_err) = batch_means(&fa, batches);
    Ok(CoupledBias {
        bias,
        std_err,
        chain_mean,
        chain_std_err,
        samples: kept as u64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_builtin_model, ModelSpec, Space};

    fn normal_grid() -> GridDensity {
        standard_normal_grid().unwrap()
    }

    #[test]
    fn constant_observable_has_zero_risk() {
        let m = make_builtin_model(&ModelSpec::Quadratic { r: 1.0, s: 0.25 }, 1, None).unwrap();
        let p = ChainParams::new(0.1, 1.0, 20, 3).unwrap();
        let init = PositionLaw::Gaussian {
            mean: 0.0,
            std: 1.0,
            wrap: false,
        };
        let r = quadratic_risk(
            m.as_ref(),
            &Observable::Constant { value: 2.5 },
            &p,
            4,
            8,
            2.5,
            &init,
        )
        .unwrap();
        assert_eq!(r.value, 0.0);
        assert!(quadratic_risk(
            m.as_ref(),
            &Observable::Constant { value: 2.5 },
            &p,
            4,
            7,
            2.5,
            &init
        )
        .is_err());
    }

    #[test]
    fn zero_states_have_zero_moments() {
        let s = ParticleState::new(
            Points::zeros(5, 2),
            Points::zeros(5, 2),
            Space::euclidean(2),
        )
        .unwrap();
        let m = empirical_moments([(0, &s), (1, &s)], &[2, 4, 6]).unwrap();
        assert!(m
            .snapshots
            .iter()
            .all(|x| x.x.iter().chain(&x.v).all(|v| *v == 0.0)));
        assert!(empirical_moments([(0, &s)], &[3]).is_err());
    }

    #[test]
    fn gaussian_sixth_moment() {
        let mut rng = RngStream::new(99);
        let n = 100_000;
        let v: Vec<f64> = (0..n).map(|_| rng.gaussian()).collect();
        let s = ParticleState::new(
            Points::zeros(n, 1),
            Points::from_scalars(&v),
            Space::euclidean(1),
        )
        .unwrap();
        let m = moment_snapshot(0, &s, &[6]);
        let sixth: Vec<f64> = v.iter().map(|x| x.powi(6)).collect();
        let (_, se) = mean_and_std_err(&sixth);
        assert!((m.v[0] - 15.0).abs() < 3.0 * se);
    }

    #[test]
    fn divergence_of_reference_samples() {
        let mut rng = RngStream::new(4);
        let xs: Vec<f64> = (0..100_000).map(|_| rng.gaussian()).collect();
        let spec = HistogramSpec {
            bins: BinCount::Fixed(50),
            range: Some((-4.0, 4.0)),
        };
        let tv = histogram_divergence(&xs, &normal_grid(), &spec, DivergenceKind::Tv).unwrap();
        let kl = histogram_divergence(&xs, &normal_grid(), &spec, DivergenceKind::Kl).unwrap();
        assert!(tv.value <= 0.03, "tv = {}", tv.value);
        assert!(tv.value <= (kl.value / 2.0).sqrt());
    }

    #[test]
    fn identical_and_disjoint_histograms() {
        let p = [0.25, 0.25, 0.5, 0.0];
        assert_eq!(
            discrete_divergence(&p, &p, DivergenceKind::Kl),
            (0.0, false)
        );
        assert_eq!(
            discrete_divergence(&p, &p, DivergenceKind::Tv),
            (0.0, false)
        );
        let q = [0.0, 0.0, 0.0, 1.0];
        assert_eq!(discrete_divergence(&p, &q, DivergenceKind::Tv).0, 1.0);
        assert_eq!(
            discrete_divergence(&p, &q, DivergenceKind::Kl),
            (f64::INFINITY, true)
        );
    }

    #[test]
    fn clipped_samples_are_counted() {
        let xs = vec![-20.0, 0.0, 0.1, 20.0];
        let d = histogram_divergence(
            &xs,
            &normal_grid(),
            &HistogramSpec::default(),
            DivergenceKind::Tv,
        )
        .unwrap();
        assert_eq!(d.clipped, 2);
        let small = HistogramSpec {
            bins: BinCount::Fixed(5),
            range: None,
        };
        assert!(histogram_divergence(&xs, &normal_grid(), &small, DivergenceKind::Tv).is_err());
        assert_eq!(BinCount::Sturges.resolve(1000), 11);
    }

    #[test]
    fn geometric_fit_exact_and_noisy() {
        let ys: Vec<f64> = (0..40).map(|k| 3.0 * 0.9f64.powi(k)).collect();
        let fit = fit_geometric_rate(&ys).unwrap();
        assert!((fit.rate - 0.9).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        let mut rng = RngStream::new(8);
        let noisy: Vec<f64> = ys
            .iter()
            .map(|y| y * (1.0 + 0.05 * (2.0 * rng.uniform() - 1.0)))
            .collect();
        let fit = fit_geometric_rate(&noisy).unwrap();
        assert!((fit.rate - 0.9).abs() < 0.01);
        assert!(fit.r_squared > 0.95);
        assert!(fit_geometric_rate(&[1.0; 5]).is_err());
        let mut bad = ys.clone();
        bad[3] = 0.0;
        assert!(fit_geometric_rate(&bad).is_err());
    }

    #[test]
    fn decaying_segment_bounds() {
        let mut s: Vec<f64> = vec![0.5];
        s.extend((0..30).map(|k| 1.0 * 0.8f64.powi(k)));
        s.extend(std::iter::repeat_n(0.01, 40));
        let (a, b) = decaying_segment(&s, 2.0);
        assert_eq!(a, 1);
        assert!(s[b] < 0.02 && s[b - 1] >= 0.02);
    }

    #[test]
    fn coupled_bias_is_zero_at_tiny_step() {
        let m = make_builtin_model(&ModelSpec::Quadratic { r: 1.0, s: 0.0 }, 1, None).unwrap();
        let p = ChainParams::new(1e-3, 1.0, 3000, 1).unwrap();
        let init = PositionLaw::Gaussian {
            mean: 0.0,
            std: 1.0,
            wrap: false,
        };
        let b = coupled_stationary_bias(
            m.as_ref(),
            &Observable::Moment { power: 2 },
            &p,
            1,
            &init,
            100,
            10,
        )
        .unwrap();
        assert!(b.bias.abs() < 1e-5, "bias {}", b.bias);
    }
}
