#![allow(dead_code)]

use std::path::Path;

use mfkl::chain::RngStream;
use mfkl::model::{
    grad_un, make_builtin_model, potential_un, MeanFieldModel, ModelSpec, ParticleState, Points,
};

pub fn quadratic(r: f64, s: f64, d: usize) -> Box<dyn MeanFieldModel> {
    make_builtin_model(&ModelSpec::Quadratic { r, s }, d, None).unwrap()
}

/// One instance of every built-in model family in dimension `d`.
pub fn builtin_models(d: usize) -> Vec<(&'static str, Box<dyn MeanFieldModel>)> {
    let specs = [
        ("quadratic", ModelSpec::Quadratic { r: 1.0, s: 0.25 }),
        (
            "gauss_attract_repel",
            ModelSpec::GaussAttractRepel {
                l: 1.0,
                s: 0.1,
                r: 1.0,
            },
        ),
        ("torus_trig", ModelSpec::TorusTrig { a: 0.3, b: 0.2 }),
        (
            "flat_convex_regression",
            ModelSpec::FlatConvexRegression {
                inputs: (0..6)
                    .map(|k| (0..d).map(|j| ((k * d + j) as f64 * 0.7).sin()).collect())
                    .collect(),
                targets: (0..6).map(|k| 0.2 + 0.1 * k as f64).collect(),
                ridge: 0.5,
            },
        ),
    ];
    specs
        .into_iter()
        .map(|(name, spec)| (name, make_builtin_model(&spec, d, None).unwrap()))
        .collect()
}

/// Positions and velocities iid `N(0, scale²)` (uniform positions on the
/// torus).
pub fn random_state(
    model: &dyn MeanFieldModel,
    n: usize,
    scale: f64,
    rng: &mut RngStream,
) -> ParticleState {
    let space = model.space();
    let d = space.dim;
    let mut x = Points::zeros(n, d);
    for c in x.as_mut_slice() {
        *c = if space.is_torus() {
            rng.uniform()
        } else {
            scale * rng.gaussian()
        };
    }
    let mut v = Points::zeros(n, d);
    for c in v.as_mut_slice() {
        *c = scale * rng.gaussian();
    }
    ParticleState::new(x, v, space).unwrap()
}

/// Largest relative deviation of `∇U_N` from central differences of `U_N`.
pub fn fd_relative_error(model: &dyn MeanFieldModel, x: &Points, step: f64) -> f64 {
    let g = grad_un(model, x).unwrap();
    let scale = g.as_slice().iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut worst = 0.0f64;
    for idx in 0..x.as_slice().len() {
        let mut plus = x.clone();
        plus.as_mut_slice()[idx] += step;
        let mut minus = x.clone();
        minus.as_mut_slice()[idx] -= step;
        let fd = (potential_un(model, &plus).unwrap() - potential_un(model, &minus).unwrap())
            / (2.0 * step);
        worst = worst.max((fd - g.as_slice()[idx]).abs() / scale);
    }
    worst
}

/// Relative phase-space distance, using minimal-image position differences.
pub fn state_distance(a: &ParticleState, b: &ParticleState) -> f64 {
    let space = a.space;
    let mut num = 0.0f64;
    let mut den = 1.0f64;
    for (p, q) in a.positions.as_slice().iter().zip(b.positions.as_slice()) {
        num = num.max(space.displacement_coord(*p, *q).abs());
        den = den.max(q.abs());
    }
    for (p, q) in a.velocities.as_slice().iter().zip(b.velocities.as_slice()) {
        num = num.max((p - q).abs());
        den = den.max(q.abs());
    }
    num / den
}

pub fn negate_velocities(s: &ParticleState) -> ParticleState {
    let mut out = s.clone();
    for v in out.velocities.as_mut_slice() {
        *v = -*v;
    }
    out
}

/// Mean and standard error of `v^k` for `k = 2, 4, 6`.
pub fn even_moments(samples: &[f64]) -> [(f64, f64); 3] {
    let n = samples.len() as f64;
    let mut out = [(0.0, 0.0); 3];
    for (slot, k) in out.iter_mut().zip([2, 4, 6]) {
        let vals: Vec<f64> = samples.iter().map(|v| v.powi(k)).collect();
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        *slot = (mean, (var / n).sqrt());
    }
    out
}

/// Names and contents of every file in `dir`, sorted.
pub fn dir_contents(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    out.sort();
    out
}
