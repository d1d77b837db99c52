//! Reference answers computed without running the chain: the self-consistent
//! stationary law on a 1-d grid, small-N Gibbs measures, and exact
//! stationary covariances of the discretized chain for quadratic models.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{potential_un, MeanFieldModel, Points, QuadraticParams};
use crate::numeric::pairwise_sum;

/// A probability density on a uniform 1-d grid, stored at cell centres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDensity {
    lo: f64,
    hi: f64,
    periodic: bool,
    values: Vec<f64>,
}

impl GridDensity {
    /// Normalizes `weights` (nonnegative, not all zero) into a density.
    pub fn from_weights(lo: f64, hi: f64, periodic: bool, weights: Vec<f64>) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(Error::config(
                "grid",
                format!("need lo < hi, got [{lo}, {hi}]"),
            ));
        }
        if weights.is_empty() {
            return Err(Error::config("grid.n_cells", "need at least one cell"));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::domain(
                "density weights must be finite and nonnegative",
            ));
        }
        let dx = (hi - lo) / weights.len() as f64;
        let mass = pairwise_sum(&weights) * dx;
        if !(mass > 0.0) {
            return Err(Error::domain("density has zero mass on the grid"));
        }
        let values = weights.into_iter().map(|w| w / mass).collect();
        Ok(GridDensity {
            lo,
            hi,
            periodic,
            values,
        })
    }

    /// Tabulates `exp(−u(x))` at the cell centres of `grid` and normalizes.
    /// The minimum of `u` is subtracted first.
    pub fn gibbs(grid: &GridSpec, u: &[f64]) -> Result<Self> {
        let umin = u.iter().copied().fold(f64::INFINITY, f64::min);
        if !umin.is_finite() {
            return Err(Error::domain("potential is not finite on the grid"));
        }
        let w = u.iter().map(|v| (umin - v).exp()).collect();
        GridDensity::from_weights(grid.lo, grid.hi, grid.periodic, w)
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn is_periodic(&self) -> bool {
        self.periodic
    }

    pub fn n_cells(&self) -> usize {
        self.values.len()
    }

    pub fn cell_width(&self) -> f64 {
        (self.hi - self.lo) / self.values.len() as f64
    }

    pub fn centers(&self) -> impl Iterator<Item = f64> + '_ {
        let dx = self.cell_width();
        (0..self.values.len()).map(move |j| self.lo + (j as f64 + 0.5) * dx)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn spec(&self) -> GridSpec {
        GridSpec {
            lo: self.lo,
            hi: self.hi,
            n_cells: self.values.len(),
            periodic: self.periodic,
        }
    }

    pub fn mean(&self) -> f64 {
        reference_expectation(self, |x| x)
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        reference_expectation(self, |x| (x - m) * (x - m))
    }

    /// Mass of `[a, b]`, treating the density as constant on each cell.
    pub fn interval_mass(&self, a: f64, b: f64) -> f64 {
        let (a, b) = (a.max(self.lo), b.min(self.hi));
        if b <= a {
            return 0.0;
        }
        let dx = self.cell_width();
        let first = (((a - self.lo) / dx).floor() as usize).min(self.values.len() - 1);
        let last = (((b - self.lo) / dx).ceil() as usize).min(self.values.len());
        let parts: Vec<f64> = (first..last)
            .map(|j| {
                let c0 = self.lo + j as f64 * dx;
                let overlap = (b.min(c0 + dx) - a.max(c0)).max(0.0);
                self.values[j] * overlap
            })
            .collect();
        pairwise_sum(&parts)
    }

    /// L1 distance `∫|p − q|` between two densities on the same grid.
    pub fn l1_distance(&self, other: &GridDensity) -> Result<f64> {
        if self.spec() != other.spec() {
            return Err(Error::config("grid", "densities live on different grids"));
        }
        let diff: Vec<f64> = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(p, q)| (p - q).abs())
            .collect();
        Ok(pairwise_sum(&diff) * self.cell_width())
    }
}

/// Midpoint rule `Σ f(x_j) p_j Δx`.
pub fn reference_expectation(density: &GridDensity, f: impl Fn(f64) -> f64) -> f64 {
    let dx = density.cell_width();
    let terms: Vec<f64> = density
        .centers()
        .zip(density.values())
        .map(|(x, p)| f(x) * p * dx)
        .collect();
    pairwise_sum(&terms)
}

/// Uniform grid on `[lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub n_cells: usize,
    #[serde(default)]
    pub periodic: bool,
}

impl GridSpec {
    pub const DEFAULT_CELLS: usize = 2001;

    /// `[0,1)` periodic on the torus; otherwise `[−8σ̂, 8σ̂]` with
    /// `σ̂ = r^{-1/2}` the spread of the non-interacting Gaussian (`σ̂ = 1`
    /// when `r` is not declared).
    pub fn for_model(model: &dyn MeanFieldModel) -> GridSpec {
        if model.space().is_torus() {
            return GridSpec {
                lo: 0.0,
                hi: 1.0,
                n_cells: Self::DEFAULT_CELLS,
                periodic: true,
            };
        }
        let sigma = model
            .coeffs()
            .r_conf
            .filter(|r| *r > 0.0)
            .map_or(1.0, |r| 1.0 / r.sqrt());
        GridSpec {
            lo: -8.0 * sigma,
            hi: 8.0 * sigma,
            n_cells: Self::DEFAULT_CELLS,
            periodic: false,
        }
    }

    pub fn with_cells(mut self, n_cells: usize) -> Self {
        self.n_cells = n_cells;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.hi > self.lo) {
            return Err(Error::config("grid", "need finite lo < hi"));
        }
        if self.n_cells == 0 {
            return Err(Error::config("grid.n_cells", "need at least one cell"));
        }
        Ok(())
    }

    pub fn cell_width(&self) -> f64 {
        (self.hi - self.lo) / self.n_cells as f64
    }

    pub fn centers(&self) -> Vec<f64> {
        let dx = self.cell_width();
        (0..self.n_cells)
            .map(|j| self.lo + (j as f64 + 0.5) * dx)
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct FixedPoint {
    pub density: GridDensity,
    pub iterations: usize,
    /// `‖μ − normalize(exp(−U_μ))‖_{L¹}` at the returned density.
    pub residual: f64,
}

fn require_1d(model: &dyn MeanFieldModel) -> Result<()> {
    if model.space().dim != 1 {
        return Err(Error::Unsupported(format!(
            "grid oracles need d = 1, model has d = {}",
            model.space().dim
        )));
    }
    Ok(())
}

fn gibbs_of(
    model: &dyn MeanFieldModel,
    grid: &GridSpec,
    centers: &[f64],
    mu: &GridDensity,
) -> Result<GridDensity> {
    let u: Vec<Option<f64>> = centers
        .par_iter()
        .map(|&x| model.linear_derivative(mu, x))
        .collect();
    let u: Vec<f64> = u
        .into_iter()
        .collect::<Option<_>>()
        .ok_or_else(|| Error::Unsupported("model does not expose its linear derivative".into()))?;
    GridDensity::gibbs(grid, &u)
}

/// Damped Picard iteration `μ ← (1−β)μ + β·normalize(exp(−U_μ))`, started
/// from `normalize(exp(−V))`, until the L¹ change drops below `tol`.
pub fn self_consistent_fixed_point(
    model: &dyn MeanFieldModel,
    grid: &GridSpec,
    beta: f64,
    tol: f64,
    max_iter: usize,
) -> Result<FixedPoint> {
    require_1d(model)?;
    grid.validate()?;
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::config(
            "oracle.beta",
            format!("damping must lie in (0,1], got {beta}"),
        ));
    }
    if !(tol > 0.0) {
        return Err(Error::config("oracle.tol", "tolerance must be positive"));
    }
    let centers = grid.centers();
    let v: Vec<f64> = centers
        .iter()
        .map(|&x| model.confining_potential(&[x]))
        .collect::<Option<_>>()
        .ok_or_else(|| {
            Error::Unsupported("model does not expose its confining potential".into())
        })?;
    let mut mu = GridDensity::gibbs(grid, &v)?;
    let dx = grid.cell_width();
    let mut change = f64::INFINITY;
    for iter in 1..=max_iter {
        let target = gibbs_of(model, grid, &centers, &mu)?;
        let next: Vec<f64> = mu
            .values
            .iter()
            .zip(&target.values)
            .map(|(m, t)| (1.0 - beta) * m + beta * t)
            .collect();
        let diffs: Vec<f64> = next
            .iter()
            .zip(&mu.values)
            .map(|(a, b)| (a - b).abs())
            .collect();
        change = pairwise_sum(&diffs) * dx;
        mu = GridDensity::from_weights(grid.lo, grid.hi, grid.periodic, next)?;
        log::debug!("fixed point iteration {iter}: L1 change {change:e}");
        if change < tol {
            let residual = mu.l1_distance(&gibbs_of(model, grid, &centers, &mu)?)?;
            return Ok(FixedPoint {
                density: mu,
                iterations: iter,
                residual,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: max_iter,
        residual: change,
    })
}

/// Gibbs measure `∝ exp(−U_N)` of `N ≤ 3` particles tabulated on `grid^N`.
#[derive(Debug, Clone)]
pub struct SmallNGibbs {
    pub n_particles: usize,
    pub grid: GridSpec,
    /// Row-major joint density on `grid^N` (last particle fastest).
    pub joint: Vec<f64>,
    pub one_marginal: GridDensity,
    /// Density of the first two particles on `grid²`, when `N ≥ 2`.
    pub two_marginal: Option<Vec<f64>>,
}

pub const GIBBS_CELL_BUDGET: u128 = 100_000_000;

pub fn small_n_gibbs(
    model: &dyn MeanFieldModel,
    n_particles: usize,
    grid: &GridSpec,
) -> Result<SmallNGibbs> {
    require_1d(model)?;
    grid.validate()?;
    if !(1..=3).contains(&n_particles) {
        return Err(Error::config(
            "oracle.n_particles",
            "small-N Gibbs supports 1 to 3 particles",
        ));
    }
    let m = grid.n_cells;
    let required = (m as u128).pow(n_particles as u32);
    if required > GIBBS_CELL_BUDGET {
        return Err(Error::Resource {
            required,
            budget: GIBBS_CELL_BUDGET,
        });
    }
    let total = required as usize;
    let centers = grid.centers();
    let u: Vec<f64> = (0..total)
        .into_par_iter()
        .map(|flat| {
            let mut idx = flat;
            let mut xs = vec![0.0; n_particles];
            for x in xs.iter_mut().rev() {
                *x = centers[idx % m];
                idx /= m;
            }
            potential_un(model, &Points::from_scalars(&xs))
        })
        .collect::<Result<_>>()?;
    let umin = u.iter().copied().fold(f64::INFINITY, f64::min);
    let weights: Vec<f64> = u.iter().map(|v| (umin - v).exp()).collect();
    let cell = grid.cell_width().powi(n_particles as i32);
    let z = pairwise_sum(&weights) * cell;
    let joint: Vec<f64> = weights.iter().map(|w| w / z).collect();

    // Marginals integrate out the trailing coordinates.
    let block1 = total / m;
    let one: Vec<f64> = joint
        .chunks(block1)
        .map(|c| pairwise_sum(c) * grid.cell_width().powi(n_particles as i32 - 1))
        .collect();
    let one_marginal = GridDensity::from_weights(grid.lo, grid.hi, grid.periodic, one)?;
    let two_marginal = (n_particles >= 2).then(|| {
        let block2 = total / (m * m);
        joint
            .chunks(block2)
            .map(|c| pairwise_sum(c) * grid.cell_width().powi(n_particles as i32 - 2))
            .collect()
    });
    Ok(SmallNGibbs {
        n_particles,
        grid: *grid,
        joint,
        one_marginal,
        two_marginal,
    })
}

/// Variance `1/(r+2s)` of the symmetric self-consistent Gaussian of the
/// quadratic model.
pub fn quadratic_self_consistent_variance(q: QuadraticParams) -> f64 {
    1.0 / (q.r + 2.0 * q.s)
}

/// Stationary covariance `[[xx, xv], [xv, vv]]` of the scalar chain
/// "refresh, then Verlet" for the harmonic potential `ω²x²/2`.
///
/// Writing one step as `z' = M z + c G`, the covariance solves
/// `Σ = M Σ Mᵀ + c cᵀ`, summed by repeated squaring.
pub fn harmonic_chain_covariance(omega2: f64, h: f64, gamma: f64) -> Result<[[f64; 2]; 2]> {
    if !(omega2 > 0.0 && h > 0.0 && gamma > 0.0 && gamma * h < 1.0) {
        return Err(Error::domain("need ω² > 0, h > 0, γ > 0 and γh < 1"));
    }
    if h * h * omega2 >= 4.0 {
        return Err(Error::domain("Verlet is unstable for h²ω² ≥ 4"));
    }
    let eta = 1.0 - gamma * h;
    let sig = (1.0 - eta * eta).sqrt();
    let a = 1.0 - 0.5 * h * h * omega2;
    let verlet = [[a, h], [-0.5 * h * omega2 * (1.0 + a), a]];
    let m = mat_mul(verlet, [[1.0, 0.0], [0.0, eta]]);
    let c = [verlet[0][1] * sig, verlet[1][1] * sig];
    let mut s = [[c[0] * c[0], c[0] * c[1]], [c[1] * c[0], c[1] * c[1]]];
    let mut p = m;
    for _ in 0..64 {
        let next = mat_add(s, mat_mul(mat_mul(p, s), transpose(p)));
        p = mat_mul(p, p);
        let delta = (0..2)
            .flat_map(|i| (0..2).map(move |j| (i, j)))
            .map(|(i, j)| (next[i][j] - s[i][j]).abs())
            .fold(0.0, f64::max);
        s = next;
        if delta <= 1e-16 * s[0][0].abs().max(s[1][1].abs()) {
            return Ok(s);
        }
    }
    Err(Error::NonConvergence {
        iterations: 64,
        residual: f64::NAN,
    })
}

/// Stationary `Var(x_i)` of one particle of the discretized quadratic chain:
/// the centre-of-mass mode has `ω² = r`, the `N−1` relative modes
/// `ω² = r + 2s`.
pub fn quadratic_chain_position_variance(
    q: QuadraticParams,
    n: usize,
    h: f64,
    gamma: f64,
) -> Result<f64> {
    let nf = n as f64;
    let mean_mode = harmonic_chain_covariance(q.r, h, gamma)?[0][0];
    if n == 1 {
        return Ok(mean_mode);
    }
    let rel_mode = harmonic_chain_covariance(q.r + 2.0 * q.s, h, gamma)?[0][0];
    Ok(mean_mode / nf + (1.0 - 1.0 / nf) * rel_mode)
}

type M2 = [[f64; 2]; 2];

fn mat_mul(a: M2, b: M2) -> M2 {
    let mut c = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

fn mat_add(a: M2, b: M2) -> M2 {
    [
        [a[0][0] + b[0][0], a[0][1] + b[0][1]],
        [a[1][0] + b[1][0], a[1][1] + b[1][1]],
    ]
}

fn transpose(a: M2) -> M2 {
    [[a[0][0], a[1][0]], [a[0][1], a[1][1]]]
}
