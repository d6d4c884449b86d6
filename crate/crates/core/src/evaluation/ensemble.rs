use serde::{Deserialize, Serialize};

use crate::dynamics::{L96Config, Rk4Integrator, Trajectory, TruthState};
use crate::error::{Error, Result};
use crate::models::{simulate, GridNoise, Surrogate};
use crate::par;
use crate::stochastic::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSpec {
    /// Number of initial conditions M.
    pub n_init: usize,
    /// Ensemble size N.
    pub n_members: usize,
    /// Forecast length (MTU).
    pub horizon: f64,
    /// Warm-start window (steps of truth history before each IC).
    #[serde(default = "default_spinup")]
    pub spinup: usize,
    #[serde(default)]
    pub seed: u64,
    /// Minimum spacing between initial conditions (MTU).
    #[serde(default = "default_separation")]
    pub min_separation: f64,
}

fn default_spinup() -> usize {
    100
}

fn default_separation() -> f64 {
    1.0
}

impl EnsembleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_init < 1 || self.n_members < 2 || !(self.horizon > 0.0) || self.min_separation < 0.0 {
            return Err(Error::Config("ensemble needs M >= 1, N >= 2, horizon > 0".into()));
        }
        Ok(())
    }
}

/// Error and spread of ensemble forecasts against lead time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeatherCurves {
    pub lead_times: Vec<f64>,
    pub error: Vec<f64>,
    pub spread: Vec<f64>,
    pub n_init: usize,
    pub n_members: usize,
    /// Members that blew up; their missing rows turn the curves NaN.
    pub n_blowups: usize,
}

/// Per-lead sums over grid points of the squared ensemble-mean error and of
/// the member variance (divisor N). Missing member rows count as NaN.
fn ic_sums(obs: &Trajectory, members: &[Trajectory], n_leads: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let k = obs.k();
    if obs.len() < n_leads || members.iter().any(|m| m.k() != k) {
        return Err(Error::Shape("observation and forecasts are not aligned".into()));
    }
    let n = members.len() as f64;
    let mut err = vec![0.0; n_leads];
    let mut var = vec![0.0; n_leads];
    let mut mean = vec![0.0; k];
    for t in 0..n_leads {
        mean.iter_mut().for_each(|v| *v = 0.0);
        for m in members {
            if t < m.len() {
                mean.iter_mut().zip(m.row(t)).for_each(|(a, b)| *a += b / n);
            } else {
                mean.iter_mut().for_each(|a| *a = f64::NAN);
            }
        }
        for m in members {
            if t < m.len() {
                var[t] += m.row(t).iter().zip(&mean).map(|(x, mu)| (x - mu).powi(2)).sum::<f64>() / n;
            } else {
                var[t] = f64::NAN;
            }
        }
        err[t] = obs.row(t).iter().zip(&mean).map(|(o, mu)| (o - mu).powi(2)).sum();
    }
    Ok((err, var))
}

fn lead_count(forecasts: &[Vec<Trajectory>]) -> usize {
    forecasts.iter().flatten().map(Trajectory::len).max().unwrap_or(0)
}

fn combine(parts: &[(Vec<f64>, Vec<f64>)], k: usize, pick_err: bool) -> Vec<f64> {
    let n_leads = parts.first().map_or(0, |p| p.0.len());
    let denom = (parts.len() * k) as f64;
    (0..n_leads)
        .map(|t| {
            let s: f64 = parts.iter().map(|p| if pick_err { p.0[t] } else { p.1[t] }).sum();
            (s / denom).sqrt()
        })
        .collect()
}

/// RMSE of the ensemble mean against the observation, averaged over initial
/// conditions and grid points inside the root.
pub fn weather_error(obs: &[Trajectory], forecasts: &[Vec<Trajectory>]) -> Result<Vec<f64>> {
    if obs.len() != forecasts.len() || obs.is_empty() {
        return Err(Error::Shape("one observation per initial condition required".into()));
    }
    let n_leads = lead_count(forecasts);
    let parts = obs.iter().zip(forecasts).map(|(o, f)| ic_sums(o, f, n_leads)).collect::<Result<Vec<_>>>()?;
    Ok(combine(&parts, obs[0].k(), true))
}

/// Root of the mean (over initial conditions and grid points) member variance
/// about the ensemble mean, divisor N.
pub fn weather_spread(forecasts: &[Vec<Trajectory>]) -> Result<Vec<f64>> {
    if forecasts.is_empty() || forecasts.iter().any(|f| f.len() < 2) {
        return Err(Error::Shape("spread needs at least 2 members".into()));
    }
    let n_leads = lead_count(forecasts);
    let parts = forecasts
        .iter()
        .map(|f| {
            // The mean itself serves as a dummy observation.
            let k = f[0].k();
            let dummy = Trajectory::new(k, vec![0.0; n_leads * k], f[0].forcing, f[0].dt_save, 0, 0.0)?;
            ic_sums(&dummy, f, n_leads)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(combine(&parts, forecasts[0][0].k(), false))
}

/// Draws `m` indices in `[lo, hi]` uniformly without replacement, each at
/// least `min_sep` apart.
pub fn sample_initial_indices(lo: usize, hi: usize, m: usize, min_sep: usize, rng: &mut RngStream) -> Result<Vec<usize>> {
    if hi < lo {
        return Err(Error::InsufficientData("no eligible initial conditions".into()));
    }
    let mut cand: Vec<usize> = (lo..=hi).collect();
    rng.shuffle(&mut cand);
    let mut chosen: Vec<usize> = Vec::with_capacity(m);
    for c in cand {
        if chosen.iter().all(|&p| p.abs_diff(c) >= min_sep) {
            chosen.push(c);
            if chosen.len() == m {
                return Ok(chosen);
            }
        }
    }
    Err(Error::InsufficientData(format!("only {} of {m} initial conditions fit the separation", chosen.len())))
}

fn ic_seed(seed: u64, i: usize) -> u64 {
    seed ^ (i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Ensemble forecasts of a surrogate from truth states. Every member starts
/// from the same truth state and warm-started hidden state; members differ
/// only through their noise streams.
pub fn run_weather_eval<M: Surrogate>(model: &M, truth: &Trajectory, spec: &EnsembleSpec) -> Result<WeatherCurves> {
    spec.validate()?;
    let dt = model.dt();
    if (truth.dt_save - dt).abs() > 1e-9 * dt {
        return Err(Error::Config(format!("truth interval {} differs from model dt {dt}", truth.dt_save)));
    }
    let h = (spec.horizon / dt).round() as usize;
    let sep = (spec.min_separation / dt).round() as usize;
    if truth.len() < spec.spinup + h + 1 {
        return Err(Error::InsufficientData("truth too short for spin-up plus horizon".into()));
    }
    let mut rng = RngStream::new(spec.seed, u64::MAX);
    let ics = sample_initial_indices(spec.spinup, truth.len() - 1 - h, spec.n_init, sep, &mut rng)?;
    let k = truth.k();
    let parts = par::map_range(ics.len(), |i| -> Result<(Vec<f64>, Vec<f64>, usize)> {
        let t = ics[i];
        let history = truth.slice(t - spec.spinup, spec.spinup + 1)?;
        let state = model.warm_state(&history, spec.spinup)?;
        let obs = truth.slice(t, h + 1)?;
        let mut members = Vec::with_capacity(spec.n_members);
        let mut blowups = 0;
        for n in 0..spec.n_members {
            let mut noise = GridNoise::new(ic_seed(spec.seed, i), n as u64, k);
            let out = simulate(model, truth.row(t), state.clone(), truth.forcing, h, 1, &mut noise, spec.seed)?;
            blowups += usize::from(out.blowup_time.is_some());
            members.push(out.trajectory);
        }
        let (e, v) = ic_sums(&obs, &members, h + 1)?;
        Ok((e, v, blowups))
    });
    let mut sums = Vec::with_capacity(parts.len());
    let mut n_blowups = 0;
    for p in parts {
        let (e, v, b) = p?;
        n_blowups += b;
        sums.push((e, v));
    }
    Ok(WeatherCurves {
        lead_times: (0..=h).map(|t| t as f64 * dt).collect(),
        error: combine(&sums, k, true),
        spread: combine(&sums, k, false),
        n_init: spec.n_init,
        n_members: spec.n_members,
        n_blowups,
    })
}

/// Full two-tier states spaced `spacing` MTU apart along one truth run,
/// after `burn_in` MTU from `init`.
pub fn truth_states(
    cfg: &L96Config,
    init: &TruthState,
    n: usize,
    spacing: f64,
    burn_in: f64,
    dt_inner: f64,
) -> Result<Vec<TruthState>> {
    let mut rk = Rk4Integrator::new(*cfg, dt_inner);
    let mut s = init.clone();
    let mut time = 0.0;
    let mut run = |s: &mut TruthState, steps: usize, time: &mut f64| -> Result<()> {
        for _ in 0..steps {
            *time += dt_inner;
            rk.step(s, *time)?;
        }
        Ok(())
    };
    run(&mut s, (burn_in / dt_inner).round() as usize, &mut time)?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(s.clone());
        run(&mut s, (spacing / dt_inner).round() as usize, &mut time)?;
    }
    Ok(out)
}

/// Perfect-model check: for each initial state, `n_members + 1` two-tier
/// runs from independently perturbed X. Run 0 is the observation and the
/// rest form the forecast ensemble.
pub fn truth_ensemble_eval(
    cfg: &L96Config,
    ics: &[TruthState],
    n_members: usize,
    horizon: f64,
    dt_inner: f64,
    dt_save: f64,
    perturb_sd: f64,
    seed: u64,
) -> Result<WeatherCurves> {
    if ics.is_empty() || n_members < 2 {
        return Err(Error::Config("perfect-model ensemble needs ICs and N >= 2".into()));
    }
    let per_save = (dt_save / dt_inner).round() as usize;
    let h = (horizon / dt_save).round() as usize;
    let parts = par::map_range(ics.len(), |i| -> Result<(Vec<f64>, Vec<f64>)> {
        let mut rk = Rk4Integrator::new(*cfg, dt_inner);
        let mut runs = Vec::with_capacity(n_members + 1);
        for n in 0..=n_members {
            let mut rng = RngStream::new(ic_seed(seed, i), n as u64);
            let mut s = ics[i].clone();
            s.x.iter_mut().for_each(|v| *v += perturb_sd * rng.gaussian());
            let mut data = Vec::with_capacity((h + 1) * cfg.k);
            data.extend_from_slice(&s.x);
            for step in 1..=h * per_save {
                rk.step(&mut s, step as f64 * dt_inner)?;
                if step % per_save == 0 {
                    data.extend_from_slice(&s.x);
                }
            }
            runs.push(Trajectory::new(cfg.k, data, cfg.forcing, dt_save, seed, 0.0)?);
        }
        ic_sums(&runs[0], &runs[1..], h + 1)
    });
    let sums = parts.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(WeatherCurves {
        lead_times: (0..=h).map(|t| t as f64 * dt_save).collect(),
        error: combine(&sums, cfg.k, true),
        spread: combine(&sums, cfg.k, false),
        n_init: ics.len(),
        n_members,
        n_blowups: 0,
    })
}
