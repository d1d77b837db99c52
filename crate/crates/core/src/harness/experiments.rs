use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use super::config::{BoundInputs, ExperimentConfig, ExperimentKind, OracleSection};
use super::{Gate, Outputs};
use crate::chain::{
    advance, derive_seed, run_chain, sample_initial, ChainParams, Observer, RngStream,
};
use crate::error::{Error, Result};
use crate::lyapunov::{
    drift_slope_sweep, estimate_kernel_drift, sixth_moment_bound, sixth_moment_exact, LyapunovSpec,
};
use crate::model::{make_builtin_model, MeanFieldModel, ParticleState, Points, Space};
use crate::numeric::linear_fit;
use crate::oracle::{
    quadratic_chain_position_variance, quadratic_self_consistent_variance, reference_expectation,
    self_consistent_fixed_point, small_n_gibbs, FixedPoint, GridSpec,
};
use crate::risk::{
    decaying_segment, discrete_divergence, fit_geometric_rate, histogram, histogram_divergence,
    phase_space_divergence, reference_bin_masses, replica_final_states, risk_from_final_states,
    BinCount, DivergenceKind, HistogramSpec, Observable, RiskEstimate,
};
use crate::theory::{
    contraction_constants, entropy_bound, gaussian_init_h0_i0, lsi_constants, lyapunov_constants,
    risk_bounds, LyapunovConstants, RiskMode,
};

type Outcome = (Value, Vec<Gate>);

/// Stream used to draw the test states of `lyapunov_check`.
const STATE_STREAM: u64 = 0x5354_4154_4553;

pub(crate) fn dispatch(
    config: &ExperimentConfig,
    kind: ExperimentKind,
    out: &mut Outputs,
) -> Result<Outcome> {
    let model = make_builtin_model(&config.model, config.d, config.coefficients.as_ref())?;
    let model = model.as_ref();
    match kind {
        ExperimentKind::Sample => sample(config, model, out),
        ExperimentKind::SweepH => sweep_h(config, model, out),
        ExperimentKind::SweepN => sweep_n(config, model, out),
        ExperimentKind::Converge => converge(config, model, out),
        ExperimentKind::LyapunovCheck => lyapunov_check(config, model, out),
        ExperimentKind::Oracle => oracle(config, model, out),
        ExperimentKind::Constants => constants(config, model, out),
        ExperimentKind::Risk => risk(config, model, out),
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable")
}

#[derive(Serialize)]
struct TrajectoryRow {
    step: u64,
    particle: usize,
    coord: usize,
    x: f64,
    v: f64,
}

fn state_rows(step: u64, state: &ParticleState, rows: &mut Vec<TrajectoryRow>) {
    for i in 0..state.n() {
        for (k, (&x, &v)) in state
            .positions
            .row(i)
            .iter()
            .zip(state.velocities.row(i))
            .enumerate()
        {
            rows.push(TrajectoryRow {
                step,
                particle: i,
                coord: k,
                x,
                v,
            });
        }
    }
}

struct TrajectoryObserver {
    stride: u64,
    rows: Vec<TrajectoryRow>,
}

impl Observer for TrajectoryObserver {
    fn stride(&self) -> u64 {
        self.stride
    }

    fn observe(
        &mut self,
        step: u64,
        state: &ParticleState,
        _grad: &Points,
    ) -> std::result::Result<(), String> {
        state_rows(step, state, &mut self.rows);
        Ok(())
    }
}

#[derive(Serialize)]
struct SweepRow {
    parameter: f64,
    estimate: f64,
    std_err: f64,
    gate_lo: Option<f64>,
    gate_hi: Option<f64>,
    pass: bool,
}

impl SweepRow {
    fn gated(
        parameter: f64,
        estimate: f64,
        std_err: f64,
        lo: Option<f64>,
        hi: Option<f64>,
    ) -> Self {
        let pass = estimate.is_finite()
            && lo.is_none_or(|l| estimate >= l)
            && hi.is_none_or(|h| estimate <= h);
        SweepRow {
            parameter,
            estimate,
            std_err,
            gate_lo: lo,
            gate_hi: hi,
            pass,
        }
    }
}

fn sample(
    config: &ExperimentConfig,
    model: &dyn MeanFieldModel,
    out: &mut Outputs,
) -> Result<Outcome> {
    let kind = ExperimentKind::Sample;
    let params = config.chain(kind)?;
    let n = config.n_particles(kind)?;
    let stride = config.sample.as_ref().map_or(1, |s| s.stride);
    if stride == 0 {
        return Err(Error::config("sample.stride", "stride must be at least 1"));
    }
    let mut rng = RngStream::new(params.seed);
    let init = sample_initial(&config.init, n, model.space(), &mut rng)?;
    let mut obs = TrajectoryObserver {
        stride,
        rows: Vec::new(),
    };
    let last = run_chain(model, &init, &params, &mut [&mut obs], &mut rng)?;
    let mut first_rows = Vec::new();
    state_rows(0, &init, &mut first_rows);
    let mut last_rows = Vec::new();
    state_rows(params.n_steps, &last, &mut last_rows);
    out.write_csv("trajectory.csv", &obs.rows)?;
    out.write_csv("initial_state.csv", &first_rows)?;
    out.write_csv("final_state.csv", &last_rows)?;
    let results = json!({
        "n_particles": n,
        "d": config.d,
        "n_steps": params.n_steps,
        "stride": stride,
        "observations": obs.rows.len() / (n * config.d),
        "step_size_warning": params.step_size_warning(model.coeffs()),
    });
    Ok((results, Vec::new()))
}

fn sweep_h(
    config: &ExperimentConfig,
    model: &dyn MeanFieldModel,
    out: &mut Outputs,
) -> Result<Outcome> {
    let kind = ExperimentKind::SweepH;
    let sec = config
        .sweep_h
        .as_ref()
        .ok_or_else(|| Error::config("sweep_h", "missing"))?;
    let base = config.chain(kind)?;
    let n = config.n_particles(kind)?;
    let q = model.quadratic_params().ok_or_else(|| {
        Error::Unsupported("sweep_h needs a model with a closed-form flow (quadratic)".into())
    })?;
    let params: Vec<ChainParams> = sec
        .hs
        .iter()
        .map(|&h| {
            ChainParams::new(h, base.gamma, base.n_steps, base.seed)
                .map_err(|e| Error::config("sweep_h.hs", e.to_string()))
        })
        .collect::<Result<_>>()?;
    let estimates = params
        .par_iter()
        .map(|p| {
            crate::risk::coupled_stationary_bias(
                model,
                &sec.observable,
                p,
                n,
                &config.init,
                sec.burn_in,
                sec.batches,
            )
        })
        .collect::<Result<Vec<_>>>()?;

    // Exact stationary second moment of the discretized chain and of the
    // N-particle Gibbs measure.
    let oracle = matches!(sec.observable, Observable::Moment { power: 2 });
    let df = config.d as f64;
    let nf = n as f64;
    let gibbs = df * (1.0 / (nf * q.r) + (1.0 - 1.0 / nf) / (q.r + 2.0 * q.s));

    let mut bias_rows = Vec::new();
    let mut mean_rows = Vec::new();
    let mut per_h = Vec::new();
    for (p, e) in params.iter().zip(&estimates) {
        let exact = if oracle {
            Some(df * quadratic_chain_position_variance(q, n, p.h, p.gamma)?)
        } else {
            None
        };
        let exact_bias = exact.map(|v| v - gibbs);
        let tol = exact_bias.map(|b| f64::max(3.0 * e.std_err, 0.05 * b.abs()));
        bias_rows.push(SweepRow::gated(
            p.h,
            e.bias,
            e.std_err,
            exact_bias.zip(tol).map(|(b, t)| b - t),
            exact_bias.zip(tol).map(|(b, t)| b + t),
        ));
        mean_rows.push(SweepRow::gated(
            p.h,
            e.chain_mean,
            e.chain_std_err,
            exact.map(|v| v - 3.0 * e.chain_std_err),
            exact.map(|v| v + 3.0 * e.chain_std_err),
        ));
        per_h.push(json!({
            "h": p.h,
            "bias": e.bias,
            "bias_std_err": e.std_err,
            "chain_mean": e.chain_mean,
            "chain_std_err": e.chain_std_err,
            "exact_chain_value": exact,
            "exact_bias": exact_bias,
            "samples": e.samples,
        }));
    }
    out.write_csv("sweep_h.csv", &bias_rows)?;
    out.write_csv("sweep_h_mean.csv", &mean_rows)?;

    let mut gates = Vec::new();
    for r in &bias_rows {
        if r.gate_lo.is_some() {
            gates.push(Gate {
                name: format!("bias at h = {}", r.parameter),
                value: r.estimate,
                lo: r.gate_lo,
                hi: r.gate_hi,
                pass: r.pass,
                detail: None,
            });
        }
    }
    for r in &mean_rows {
        if r.gate_lo.is_some() {
            gates.push(Gate {
                name: format!("stationary mean at h = {}", r.parameter),
                value: r.estimate,
                lo: r.gate_lo,
                hi: r.gate_hi,
                pass: r.pass,
                detail: None,
            });
        }
    }
    let log_h: Vec<f64> = params.iter().map(|p| p.h.ln()).collect();
    let log_b: Vec<f64> = estimates.iter().map(|e| e.bias.abs().ln()).collect();
    let fit = linear_fit(&log_h, &log_b);
    let (lo, hi) = sec.slope_gate;
    gates.push(
        Gate::within("slope", fit.slope, Some(lo), Some(hi))
            .with_detail(format!("log|bias| vs log h, r2 = {:.4}", fit.r_squared)),
    );
    let results = json!({
        "n_particles": n,
        "gibbs_value": if oracle { Some(gibbs) } else { None },
        "per_h": per_h,
        "slope_fit": fit,
    });
    Ok((results, gates))
}

fn oracle_fixed_point(model: &dyn MeanFieldModel, sec: &OracleSection) -> Result<FixedPoint> {
    let grid = sec.grid.unwrap_or_else(|| GridSpec::for_model(model));
    self_consistent_fixed_point(model, &grid, sec.beta, sec.tol, sec.max_iter)
}

fn pooled_positions(states: &[ParticleState]) -> Vec<f64> {
    states
        .iter()
        .flat_map(|s| s.positions.as_slice().iter().copied())
        .collect()
}

/// Measured entropy and TV surrogates of the pooled one-particle marginal.
struct Surrogates {
    kl: f64,
    tv: f64,
    kl_infinite: bool,
    clipped: usize,
    n_bins: usize,
}

fn surrogates(states: &[ParticleState], fp: &FixedPoint, bins: BinCount) -> Result<Surrogates> {
    let xs = pooled_positions(states);
    let spec = HistogramSpec { bins, range: None };
    let kl = histogram_divergence(&xs, &fp.density, &spec, DivergenceKind::Kl)?;
    let tv = histogram_divergence(&xs, &fp.density, &spec, DivergenceKind::Tv)?;
    Ok(Surrogates {
        kl: kl.value,
        tv: tv.value,
        kl_infinite: kl.infinite,
        clipped: kl.clipped,
        n_bins: kl.n_bins,
    })
}

struct RiskRecord {
    estimate: RiskEstimate,
    surrogates: Surrogates,
    bound_tv2: Option<f64>,
    bound_entropy: Option<f64>,
}

impl RiskRecord {
    fn to_json(&self) -> Value {
        json!({
            "estimate": self.estimate,
            "kl_hat": self.surrogates.kl,
            "kl_infinite": self.surrogates.kl_infinite,
            "tv_hat": self.surrogates.tv,
            "histogram_bins": self.surrogates.n_bins,
            "clipped_samples": self.surrogates.clipped,
            "bound_tv2": self.bound_tv2,
            "bound_entropy": self.bound_entropy,
        })
    }
}

#[allow(clippy::too_many_arguments)]
fn measure_risk(
    model: &dyn MeanFieldModel,
    config: &ExperimentConfig,
    params: &ChainParams,
    f: &Observable,
    fp: &FixedPoint,
    n: usize,
    reps: usize,
    bound: &BoundInputs,
    bins: BinCount,
) -> Result<RiskRecord> {
    if reps < 8 {
        return Err(Error::config("reps", "need at least 8 replicas"));
    }
    let oracle_mean = reference_expectation(&fp.density, |x| f.eval(&[x]));
    let finals = replica_final_states(model, params, n, reps, &config.init)?;
    let estimate = risk_from_final_states(&finals, f, params, oracle_mean);
    let s = surrogates(&finals, fp, bins)?;
    let (bound_tv2, bound_entropy) = match f.sup_norm() {
        Some(sup) if !s.kl_infinite => (
            Some(risk_bounds(sup, n, s.kl, RiskMode::Tv2 { tv: s.tv })?),
            Some(risk_bounds(
                sup,
                n,
                s.kl,
                RiskMode::Entropy {
                    r: bound.r_entropy,
                    eta_n: bound.eta_n,
                },
            )?),
        ),
        _ => (None, None),
    };
    Ok(RiskRecord {
        estimate,
        surrogates: s,
        bound_tv2,
        bound_entropy,
    })
}

fn sweep_n(
    config: &ExperimentConfig,
    model: &dyn MeanFieldModel,
    out: &mut Outputs,
) -> Result<Outcome> {
    let kind = ExperimentKind::SweepN;
    let sec = config
        .sweep_n
        .as_ref()
        .ok_or_else(|| Error::config("sweep_N", "missing"))?;
    let params = config.chain(kind)?;
    let fp = oracle_fixed_point(model, &OracleSection::default())?;
    let mut records = Vec::new();
    for &n in &sec.ns {
        records.push(measure_risk(
            model,
            config,
            &params,
            &sec.observable,
            &fp,
            n,
            sec.reps,
            &sec.bound,
            BinCount::Fixed(sec.bound.bins),
        )?);
    }
    let rows: Vec<SweepRow> = sec
        .ns
        .iter()
        .zip(&records)
        .map(|(&n, r)| {
            let e = &r.estimate;
            SweepRow::gated(
                n as f64,
                e.value,
                e.std_err,
                None,
                r.bound_tv2.map(|b| b + 3.0 * e.std_err),
            )
        })
        .collect();
    out.write_csv("sweep_N.csv", &rows)?;

    let mut gates: Vec<Gate> = rows
        .iter()
        .filter(|r| r.gate_hi.is_some())
        .map(|r| Gate {
            name: format!("risk within bound at N = {}", r.parameter),
            value: r.estimate,
            lo: None,
            hi: r.gate_hi,
            pass: r.pass,
            detail: None,
        })
        .collect();
    let mut trend = Value::Null;
    if sec.ns.len() >= 2 {
        let (i_min, _) = sec
            .ns
            .iter()
            .enumerate()
            .min_by_key(|(_, n)| **n)
            .expect("nonempty");
        let (i_max, _) = sec
            .ns
            .iter()
            .enumerate()
            .max_by_key(|(_, n)| **n)
            .expect("nonempty");
        let small = &records[i_min].estimate;
        let large = &records[i_max].estimate;
        let combined = small.std_err.hypot(large.std_err);
        let gap = (small.value - large.value) / combined;
        gates.push(
            Gate::within("risk gap in combined std errs", gap, Some(2.0), None)
                .with_detail(format!("N = {} vs N = {}", sec.ns[i_min], sec.ns[i_max])),
        );
        trend = json!({"small_n": sec.ns[i_min], "large_n": sec.ns[i_max], "gap_sigmas": gap});
    }
    let results = json!({
        "oracle_iterations": fp.iterations,
        "per_n": records.iter().map(RiskRecord::to_json).collect::<Vec<_>>(),
        "trend": trend,
    });
    Ok((results, gates))
}

#[derive(Serialize)]
struct SeriesRow {
    step: u64,
    metric: &'static str,
    value: f64,
}

fn converge(
    config: &ExperimentConfig,
    model: &dyn MeanFieldModel,
    out: &mut Outputs,
) -> Result<Outcome> {
    let kind = ExperimentKind::Converge;
    let sec = config
        .converge
        .as_ref()
        .ok_or_else(|| Error::config("converge", "missing"))?;
    let params = config.chain(kind)?;
    let n = config.n_particles(kind)?;
    if sec.stride == 0 {
        return Err(Error::config(
            "converge.stride",
            "stride must be at least 1",
        ));
    }
    if sec.reps == 0 {
        return Err(Error::config("converge.reps", "need at least one replica"));
    }
    let fp = oracle_fixed_point(model, &sec.oracle)?;
    if let Some(w) = params.step_size_warning(model.coeffs()) {
        log::warn!("{w}");
    }
    let mut chains: Vec<(ParticleState, RngStream)> = (0..sec.reps as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = RngStream::for_replica(params.seed, k);
            let s0 = sample_initial(&config.init, n, model.space(), &mut rng)?;
            Ok((s0, rng))
        })
        .collect::<Result<_>>()?;
    let segment = ChainParams {
        n_steps: sec.stride,
        ..params
    };
    let n_obs = params.n_steps / sec.stride;
    let pos_bins = 50;
    let (xlo, xhi) = sec.x_range;
    let q_pos = reference_bin_masses(&fp.density, xlo, xhi, pos_bins);

    let mut phase_tv = Vec::new();
    let mut pos_tv = Vec::new();
    let mut pos_kl = Vec::new();
    let mut rows = Vec::new();
    let mut pinsker_worst = f64::NEG_INFINITY;
    for j in 0..=n_obs {
        if j > 0 {
            chains
                .par_iter_mut()
                .try_for_each(|(s, rng)| -> Result<()> {
                    *s = advance(model, s, &segment, &mut [], rng)?;
                    Ok(())
                })?;
        }
        let step = j * sec.stride;
        let xs: Vec<f64> = chains
            .iter()
            .flat_map(|(s, _)| s.positions.as_slice().iter().copied())
            .collect();
        let vs: Vec<f64> = chains
            .iter()
            .flat_map(|(s, _)| s.velocities.as_slice().iter().copied())
            .collect();
        let ps = phase_space_divergence(
            &xs,
            &vs,
            &fp.density,
            sec.x_range,
            sec.v_range,
            sec.bins,
            DivergenceKind::Tv,
        )?;
        let (p, _) = histogram(&xs, xlo, xhi, pos_bins);
        let (tv, _) = discrete_divergence(&p, &q_pos, DivergenceKind::Tv);
        let (kl, infinite) = discrete_divergence(&p, &q_pos, DivergenceKind::Kl);
        if !infinite {
            pinsker_worst = pinsker_worst.max(tv - (kl / 2.0).sqrt());
        }
        rows.push(SeriesRow {
            step,
            metric: "phase_tv",
            value: ps.value,
        });
        rows.push(SeriesRow {
            step,
            metric: "position_tv",
            value: tv,
        });
        rows.push(SeriesRow {
            step,
            metric: "position_kl",
            value: kl,
        });
        phase_tv.push(ps.value);
        pos_tv.push(tv);
        pos_kl.push(kl);
    }
    out.write_csv("converge.csv", &rows)?;

    let tc = contraction_constants(params.gamma, sec.rho, 0.0)?;
    let floor_rate = tc.step_factor(params.h);
    let rate_gate = floor_rate + sec.rate_slack;
    let (a, b) = decaying_segment(&phase_tv, sec.floor_factor);
    let mut gates = vec![
        Gate::within("pinsker excess", pinsker_worst, None, Some(0.0))
            .with_detail("max over steps of tv - sqrt(kl/2)"),
    ];
    let fit = if b - a >= 10 {
        let fit = fit_geometric_rate(&phase_tv[a..b])?;
        let per_step = fit.rate.powf(1.0 / sec.stride as f64);
        gates.push(
            Gate::within("per-step rate", per_step, None, Some(rate_gate))
                .with_detail(format!("floor {floor_rate:.6} + slack {}", sec.rate_slack)),
        );
        gates.push(Gate::within(
            "r2",
            fit.r_squared,
            Some(sec.min_r_squared),
            None,
        ));
        json!({"fit": fit, "per_step_rate": per_step})
    } else {
        gates.push(
            Gate::within("decaying segment length", (b - a) as f64, Some(10.0), None)
                .with_detail("too few points to fit a rate"),
        );
        Value::Null
    };
    let results = json!({
        "n_particles": n,
        "reps": sec.reps,
        "stride": sec.stride,
        "kappa": tc.kappa,
        "floor_rate": floor_rate,
        "segment": {"start_step": a as u64 * sec.stride, "end_step": b as u64 * sec.stride},
        "rate": fit,
        "final": {
            "phase_tv": phase_tv.last(),
            "position_tv": pos_tv.last(),
            "position_kl": pos_kl.last(),
        },
    });
    Ok((results, gates))
}

#[derive(Serialize)]
struct DriftRow {
    state: usize,
    h: f64,
    lyapunov: f64,
    pv_estimate: f64,
    pv_std_err: f64,
    rhs_bound: f64,
    margin_sigmas: f64,
    holds: bool,
}

fn torus_states(
    space: Space,
    n: usize,
    count: usize,
    v_max: f64,
    rng: &mut RngStream,
) -> Result<Vec<ParticleState>> {
    let d = space.dim;
    (0..count)
        .map(|_| {
            let mut x = Points::zeros(n, d);
            for c in x.as_mut_slice() {
                *c = space.wrap_coord(rng.uniform());
            }
            let mut v = Points::zeros(n, d);
            for i in 0..n {
                let dir: Vec<f64> = (0..d).map(|_| rng.gaussian()).collect();
                let norm = dir
                    .iter()
                    .map(|c| c * c)
                    .sum::<f64>()
                    .sqrt()
                    .max(f64::MIN_POSITIVE);
                let mag = v_max * rng.uniform();
                for (o, c) in v.row_mut(i).iter_mut().zip(&dir) {
                    *o = mag * c / norm;
                }
            }
            ParticleState::new(x, v, space)
        })
        .collect()
}

fn euclidean_states(
    space: Space,
    n: usize,
    count: usize,
    (lo, hi): (f64, f64),
    rng: &mut RngStream,
) -> Result<Vec<ParticleState>> {
    if !(lo > 0.0 && hi >= lo) {
        return Err(Error::config(
            "lyapunov_check.scale_range",
            "need 0 < lo <= hi",
        ));
    }
    (0..count)
        .map(|_| {
            let scale = (lo.ln() + rng.uniform() * (hi / lo).ln()).exp();
            let mut x = Points::zeros(n, space.dim);
            for c in x.as_mut_slice() {
                *c = scale * rng.gaussian();
            }
            let mut v = Points::zeros(n, space.dim);
            for c in v.as_mut_slice() {
                *c = scale * rng.gaussian();
            }
            ParticleState::new(x, v, space)
        })
        .collect()
}

fn lyapunov_check(
    config: &ExperimentConfig,
    model: &dyn MeanFieldModel,
    out: &mut Outputs,
) -> Result<Outcome> {
    let kind = ExperimentKind::LyapunovCheck;
    let sec = config
        .lyapunov_check
        .as_ref()
        .ok_or_else(|| Error::config("lyapunov_check", "missing"))?;
    let base = config.chain(kind)?;
    let n = config.n_particles(kind)?;
    let space = model.space();
    let mut rng = RngStream::new(derive_seed(base.seed, STATE_STREAM));
    for &h in &sec.hs {
        ChainParams::new(h, base.gamma, 1, base.seed)
            .map_err(|e| Error::config("lyapunov_check.hs", e.to_string()))?;
    }
    if space.is_torus() {
        let states = torus_states(space, n, sec.n_states, sec.v_max, &mut rng)?;
        let mut rows = Vec::new();
        for &h in &sec.hs {
            let params = ChainParams::new(h, base.gamma, 1, base.seed)?;
            for (i, s) in states.iter().enumerate() {
                let r = estimate_kernel_drift(
                    model,
                    s,
                    &params,
                    &LyapunovSpec::TorusV6,
                    sec.m_draws,
                    derive_seed(base.seed, i as u64),
                )?;
                rows.push(DriftRow {
                    state: i,
                    h,
                    lyapunov: r.lyapunov,
                    pv_estimate: r.pv_estimate,
                    pv_std_err: r.pv_std_err,
                    rhs_bound: r.rhs_bound,
                    margin_sigmas: r.margin_sigmas,
                    holds: r.holds,
                });
            }
        }
        out.write_csv("drift.csv", &rows)?;
        let failed: Vec<&DriftRow> = rows.iter().filter(|r| !r.holds).collect();
        let mut gates =
            vec![
                Gate::within("failed drift cases", failed.len() as f64, None, Some(0.0))
                    .with_detail(format!("{} cases", rows.len())),
            ];
        for r in &failed {
            gates.push(Gate {
                name: format!("drift at state {} h {}", r.state, r.h),
                value: r.margin_sigmas,
                lo: Some(-3.0),
                hi: None,
                pass: false,
                detail: Some("margin in std errs".into()),
            });
        }
        let min_margin = rows
            .iter()
            .map(|r| r.margin_sigmas)
            .fold(f64::INFINITY, f64::min);
        let results = json!({
            "space": "torus",
            "cases": rows.len(),
            "failed": failed.len(),
            "min_margin_sigmas": min_margin,
        });
        Ok((results, gates))
    } else {
        let constants = lyapunov_constants(space, base.gamma, model.coeffs(), n)?;
        let LyapunovConstants::Euclidean(lc) = constants else {
            unreachable!("Euclidean space yields Euclidean constants")
        };
        let spec = LyapunovSpec::euclidean(
            lc.alpha,
            config.model.external_potential(),
            lc.theta,
            None,
            model.coeffs(),
        )?;
        let states = euclidean_states(space, n, sec.n_states, sec.scale_range, &mut rng)?;
        let (reports, h0) = drift_slope_sweep(
            model,
            &states,
            base.gamma,
            &sec.hs,
            &spec,
            sec.m_draws,
            base.seed,
        )?;
        let rows: Vec<SweepRow> = reports
            .iter()
            .map(|r| {
                let mut row = SweepRow::gated(
                    r.h,
                    r.fit.slope,
                    r.fit.slope_std_err,
                    None,
                    Some(r.threshold + 2.0 * r.fit.slope_std_err),
                );
                row.pass = r.holds;
                row
            })
            .collect();
        out.write_csv("lyapunov_slope.csv", &rows)?;
        let gates = reports
            .iter()
            .map(|r| Gate {
                name: format!("drift slope at h {}", r.h),
                value: r.fit.slope,
                lo: None,
                hi: Some(r.threshold + 2.0 * r.fit.slope_std_err),
                pass: r.holds,
                detail: Some(format!("1 - theta h = {:.6}", r.threshold)),
            })
            .collect();
        let results = json!({
            "space": "euclidean",
            "constants": lc,
            "reports": reports,
            "h0": h0,
        });
        Ok((results, gates))
    }
}

#[derive(Serialize)]
struct DensityRow {
    x: f64,
    density: f64,
}

fn oracle(
    config: &ExperimentConfig,
    model: &dyn MeanFieldModel,
    out: &mut Outputs,
) -> Result<Outcome> {
    let sec = config.oracle.clone().unwrap_or_default();
    let fp = oracle_fixed_point(model, &sec)?;
    let rows: Vec<DensityRow> = fp
        .density
        .centers()
        .zip(fp.density.values())
        .map(|(x, &density)| DensityRow { x, density })
        .collect();
    out.write_csv("density.csv", &rows)?;
    let mut gibbs = Value::Null;
    if let Some(k) = sec.gibbs_particles {
        let grid = sec.grid.unwrap_or_else(|| GridSpec::for_model(model));
        let g = small_n_gibbs(model, k, &grid.with_cells(grid.n_cells.min(201)))?;
        let rows: Vec<DensityRow> = g
            .one_marginal
            .centers()
            .zip(g.one_marginal.values())
            .map(|(x, &density)| DensityRow { x, density })
            .collect();
        out.write_csv("gibbs_marginal.csv", &rows)?;
        gibbs = json!({
            "n_particles": k,
            "marginal_mean": g.one_marginal.mean(),
            "marginal_variance": g.one_marginal.variance(),
        });
    }
    let mut gates = vec![Gate::within("residual", fp.residual, None, Some(1e-8))];
    let closed_form = model
        .quadratic_params()
        .map(quadratic_self_consistent_variance);
    if let Some(v) = closed_form {
        gates.push(Gate::within(
            "variance",
            fp.density.variance(),
            Some(v - 1e-3),
            Some(v + 1e-3),
        ));
    }
    let results = json!({
        "iterations": fp.iterations,
        "residual": fp.residual,
        "mean": fp.density.mean(),
        "variance": fp.density.variance(),
        "closed_form_variance": closed_form,
        "grid": fp.density.spec(),
        "gibbs": gibbs,
    });
    Ok((results, gates))
}

fn constants(
    config: &ExperimentConfig,
    model: &dyn MeanFieldModel,
    out: &mut Outputs,
) -> Result<Outcome> {
    let kind = ExperimentKind::Constants;
    let sec = config
        .constants
        .as_ref()
        .ok_or_else(|| Error::config("constants", "missing"))?;
    let params = config.chain(kind)?;
    let n = config.n_particles.unwrap_or(1).max(1);
    let d = config.d;
    let tc = contraction_constants(params.gamma, sec.rho, sec.c1_hat)?.with_delta_n(sec.delta_n)?;
    let mut notes: Vec<String> = Vec::new();

    let mut entropy = Value::Null;
    match (model.quadratic_params(), &config.init) {
        (Some(q), crate::chain::PositionLaw::Gaussian { mean, std, .. }) if *std > 0.0 => {
            let (h0, i0) = gaussian_init_h0_i0(q, n, d, *mean, *std)?;
            entropy = json!({
                "h0": h0,
                "i0": i0,
                "bound_at_n_steps": entropy_bound(params.n_steps, n, d, params.h, h0, i0, &tc),
            });
        }
        _ => notes.push("entropy bound needs a quadratic model with a Gaussian initial law".into()),
    }
    let lyapunov = match lyapunov_constants(model.space(), params.gamma, model.coeffs(), n) {
        Ok(l) => to_value(&l),
        Err(Error::Unsupported(m)) => {
            notes.push(m);
            Value::Null
        }
        Err(e) => return Err(e),
    };
    let lsi = match &sec.lsi {
        Some(lc) => {
            let o = lsi_constants(lc, n, d)?;
            to_value(&o)
        }
        None => Value::Null,
    };
    let results = json!({
        "gamma": tc.gamma,
        "rho": tc.rho,
        "a": tc.a,
        "kappa": tc.kappa,
        "c1_hat": tc.c1_hat,
        "c2": tc.c2,
        "delta_n": tc.delta_n,
        "h": params.h,
        "step_factor": tc.step_factor(params.h),
        "n_particles": n,
        "d": d,
        "entropy": entropy,
        "lyapunov": lyapunov,
        "lsi": lsi,
        "gaussian_sixth_moment": sixth_moment_exact(d),
        "gaussian_sixth_moment_bound": sixth_moment_bound(d),
        "notes": notes,
    });
    let mut file = results.clone();
    file["config"] = to_value(config);
    out.write_json("constants.json", &file)?;
    Ok((results, Vec::new()))
}

fn risk(
    config: &ExperimentConfig,
    model: &dyn MeanFieldModel,
    out: &mut Outputs,
) -> Result<Outcome> {
    let kind = ExperimentKind::Risk;
    let sec = config
        .risk
        .as_ref()
        .ok_or_else(|| Error::config("risk", "missing"))?;
    let params = config.chain(kind)?;
    let n = config.n_particles(kind)?;
    let fp = oracle_fixed_point(model, &OracleSection::default())?;
    let rec = measure_risk(
        model,
        config,
        &params,
        &sec.observable,
        &fp,
        n,
        sec.reps,
        &sec.bound,
        sec.bins.resolve(sec.bound.bins),
    )?;
    let results = rec.to_json();
    let mut file = results.clone();
    file["config"] = to_value(config);
    out.write_json("risk.json", &file)?;
    let gates = match rec.bound_tv2 {
        Some(b) => vec![Gate::within(
            "risk",
            rec.estimate.value,
            None,
            Some(b + 3.0 * rec.estimate.std_err),
        )
        .with_detail("bound with measured surrogates plus 3 std errs")],
        None => Vec::new(),
    };
    Ok((results, gates))
}
