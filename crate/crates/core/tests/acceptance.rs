//! Acceptance criteria, one line each. Runs sequentially so the runtime
//! limits are measured without other tests competing for the CPU.
//!
//! `L96_ACCEPTANCE=1,4,7` restricts the run to the listed criteria.

use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::Instant;

use l96_core::dynamics::{generate_truth, rk2_omega, L96Config, Rk4Integrator, Trajectory, TruthRun, TruthState};
use l96_core::evaluation::{
    climate_section, dominant_wavenumber, flop_count, truth_basis, truth_ensemble_eval, truth_states, ModelKind,
    DEFAULT_EPS,
};
use l96_core::io::write_jsonl;
use l96_core::models::{
    rnn_hidden_update, rnn_residual_mean, rnn_subgrid_g, simulate, GridNoise, NormStats, PolyCoeffs, PolyModel,
    RnnArch, RnnModel, Surrogate,
};
use l96_core::stochastic::{ar1_chain, Ar1Params, RngStream};
use l96_core::training::{
    batch_loss, fit_polynomial, loglik_poly, loglik_rnn, rnn_grad, train_rnn_with, EpochRecord, LrSchedule,
    ResidualDataset, Segment, Sequence, TrainConfig,
};

const DT: f64 = 0.005;
const DESK_SCALE: f64 = 0.2;
const LONG_RUN: f64 = 5000.0;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn truth(forcing: f64, duration: f64, seed: u64) -> Trajectory {
    let cfg = L96Config::standard(forcing);
    let run = TruthRun { duration, dt_inner: 0.001, dt_save: DT, burn_in: 10.0 };
    generate_truth(&cfg, &run, &TruthState::random(&cfg, seed), seed).expect("truth run")
}

/// Long F=20 truth run shared by the climate and regime criteria.
struct LongTruth {
    traj: Trajectory,
    secs: f64,
}

fn long_truth() -> &'static LongTruth {
    static CELL: OnceLock<LongTruth> = OnceLock::new();
    CELL.get_or_init(|| {
        let t = Instant::now();
        let traj = truth(20.0, LONG_RUN, 7);
        LongTruth { traj, secs: t.elapsed().as_secs_f64() }
    })
}

/// Training composition at desk scale plus an F=20 hold-out.
struct Desk {
    train: ResidualDataset,
    valid: ResidualDataset,
    holdout: Trajectory,
}

fn desk() -> &'static Desk {
    static CELL: OnceLock<Desk> = OnceLock::new();
    CELL.get_or_init(|| {
        let pieces = [
            truth(19.0, 500.0 * DESK_SCALE, 1),
            truth(20.0, 1000.0 * DESK_SCALE, 2),
            truth(20.5, 500.0 * DESK_SCALE, 3),
            truth(21.0, 500.0 * DESK_SCALE, 4),
        ];
        let refs: Vec<&Trajectory> = pieces.iter().collect();
        let train = ResidualDataset::from_trajectories(&refs).unwrap();
        let valid = ResidualDataset::from_trajectories(&[&truth(21.5, 500.0 * DESK_SCALE, 5)]).unwrap();
        Desk { train, valid, holdout: truth(20.0, 1000.0, 99) }
    })
}

fn poly() -> &'static PolyModel {
    static CELL: OnceLock<PolyModel> = OnceLock::new();
    CELL.get_or_init(|| fit_polynomial(&desk().train).unwrap().model)
}

fn desk_train_config() -> TrainConfig {
    TrainConfig {
        seq_len: 200,
        batch: 32,
        epochs: 30,
        lr_schedule: LrSchedule { initial: 3e-3, steps: vec![(20, 1e-3)] },
        seed: 1,
        arch: RnnArch::default(),
        ..TrainConfig::default()
    }
}

fn log_path() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance_train_log.jsonl")
}

fn rnn() -> &'static Result<RnnModel, String> {
    static CELL: OnceLock<Result<RnnModel, String>> = OnceLock::new();
    CELL.get_or_init(|| {
        let d = desk();
        let mut log: Vec<EpochRecord> = Vec::new();
        let res = train_rnn_with(&d.train, &d.valid, &desk_train_config(), None, &mut |r| log.push(r.clone()));
        // The log is kept whatever the outcome, for diagnosis.
        let _ = write_jsonl(&log_path(), &log);
        res.map(|o| o.best).map_err(|e| e.to_string())
    })
}

fn c1_change_of_variables() -> Outcome {
    let arch = RnnArch { g_hidden: vec![3], gru_units: 2, gru_layers: 2 };
    let norm = NormStats { x_mean: 0.5, x_sd: 2.0, r_mean: 0.3, r_sd: 1.5 };
    let (dt, forcing, sigma) = (0.005, 8.0, 0.7);
    let m = RnnModel::random(arch, norm, dt, forcing, sigma, 42).unwrap();
    let xs = [0.8, 1.1, 0.7, 1.3];
    let tr = Trajectory::new(1, xs.to_vec(), forcing, dt, 0, 0.0).unwrap();
    // Density of x_{t+1} given the past: a Gaussian in x with sd dt * sigma.
    let (mut l, mut r, mut want) = (vec![0.0; m.state_dim()], 0.0, 0.0);
    for t in 0..3 {
        l = rnn_hidden_update(&m, &l, r);
        let mu = rnn_residual_mean(&m, &l);
        let g = rnn_subgrid_g(&m, xs[t]);
        let w = rk2_omega(&xs[t..t + 1], forcing, dt)[0];
        let mean_x = xs[t] + w - dt * (g + mu);
        let sd_x = dt * sigma;
        let z = (xs[t + 1] - mean_x) / sd_x;
        want += -0.5 * z * z - sd_x.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
        r = (xs[t] + w - xs[t + 1]) / dt - g;
    }
    let got = loglik_rnn(&tr, &m, false).unwrap().value();
    let rel = ((got - want) / want).abs();
    outcome(rel < 1e-9, format!("loglik {got:.12} vs oracle {want:.12}, rel err {rel:.2e} (< 1e-9)"))
}

fn c2_gradient() -> Outcome {
    let arch = RnnArch { g_hidden: vec![3, 3], gru_units: 3, gru_layers: 2 };
    let norm = NormStats { x_mean: 2.0, x_sd: 5.0, r_mean: 1.0, r_sd: 4.0 };
    let mut m = RnnModel::random(arch, norm, DT, 20.0, 1.3, 17).unwrap();
    let mut rng = RngStream::new(17, 1);
    let mut flat = m.params.to_flat();
    flat.iter_mut().for_each(|v| *v += 0.3 * rng.gaussian());
    m.params.set_flat(&flat);
    let seq = Sequence {
        x: (0..10).map(|_| 2.0 + 5.0 * rng.gaussian()).collect(),
        r_hat: (0..10).map(|_| 1.0 + 4.0 * rng.gaussian()).collect(),
    };
    let seqs = [seq];
    let (_, g) = rnn_grad(&seqs, &m);
    let analytic = g.to_flat();
    let base = m.params.to_flat();
    let loss_at = |p: &[f64]| {
        let mut mm = m.clone();
        mm.params.set_flat(p);
        batch_loss(&seqs, &mm)
    };
    let mut worst = 0.0f64;
    for i in 0..base.len() {
        let h = 1e-5 * base[i].abs().max(1.0);
        let mut p = base.clone();
        p[i] += h;
        let fp = loss_at(&p);
        p[i] -= 2.0 * h;
        let fm = loss_at(&p);
        let fd = (fp - fm) / (2.0 * h);
        // Relative error with a floor so parameters with near-zero gradient compare absolutely.
        let rel = (analytic[i] - fd).abs() / analytic[i].abs().max(fd.abs()).max(1e-4);
        worst = worst.max(rel);
    }
    outcome(worst < 1e-5, format!("{} parameters, worst rel err {worst:.2e} (< 1e-5)", base.len()))
}

fn c3_rk4_order() -> Outcome {
    let cfg = L96Config::standard(20.0);
    let mut s0 = TruthState::random(&cfg, 3);
    let mut spin = Rk4Integrator::new(cfg, 0.001);
    for _ in 0..2000 {
        spin.step_unchecked(&mut s0);
    }
    // Short enough that trajectory divergence stays below the truncation error.
    let horizon = 0.02;
    let run = |dt: f64| {
        let mut s = s0.clone();
        let mut rk = Rk4Integrator::new(cfg, dt);
        for _ in 0..(horizon / dt).round() as usize {
            rk.step_unchecked(&mut s);
        }
        s
    };
    let reference = run(1e-5);
    let dts = [4e-3, 2e-3, 1e-3, 5e-4];
    let errs: Vec<f64> = dts
        .iter()
        .map(|&dt| {
            let s = run(dt);
            s.x.iter().chain(&s.y).zip(reference.x.iter().chain(&reference.y)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        })
        .collect();
    let lx: Vec<f64> = dts.iter().map(|d| d.ln()).collect();
    let ly: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let (mx, my) = (lx.iter().sum::<f64>() / 4.0, ly.iter().sum::<f64>() / 4.0);
    let slope = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / lx.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    outcome(slope >= 3.8, format!("slope {slope:.3} (>= 3.8), errors {}", errs.iter().map(|e| format!("{e:.2e}")).collect::<Vec<_>>().join(" ")))
}

fn c4_ar1() -> Outcome {
    let p = Ar1Params::new(0.9, 0.5).unwrap();
    let h = ar1_chain(&p, 1_000_000, &mut RngStream::new(11, 0));
    let n = h.len() as f64;
    let mean = h.iter().sum::<f64>() / n;
    let var = h.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let lag1 = h.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum::<f64>() / (n - 1.0) / var;
    let var_rel = (var - 0.25) / 0.25;
    let pass = (lag1 - 0.9).abs() <= 0.01 && var_rel.abs() <= 0.02;
    outcome(pass, format!("lag-1 {lag1:.4} (0.9 +- 0.01), variance {var:.4} ({:+.2}% of 0.25, +- 2%)", 100.0 * var_rel))
}

fn c5_poly_recovery() -> Outcome {
    let (k, rows) = (8, 12_500);
    let coeffs = PolyCoeffs { a: -0.0027, b: -0.05, c: 1.12, d: 2.0 };
    let ar1 = Ar1Params::new(0.9, 0.5).unwrap();
    let mut rng = RngStream::new(5, 0);
    let x: Vec<f64> = (0..k * rows).map(|_| rng.uniform_range(-10.0, 15.0)).collect();
    let chains: Vec<Vec<f64>> = (0..k).map(|i| ar1_chain(&ar1, rows, &mut RngStream::new(5, 1 + i as u64))).collect();
    let r = (0..k * rows).map(|j| coeffs.eval(x[j]) + chains[j % k][j / k]).collect();
    let ds = ResidualDataset { k, dt: DT, r_targets: r, x_inputs: x, segments: vec![Segment { start: 0, len: rows, forcing: 20.0 }] };
    let fit = fit_polynomial(&ds).unwrap().model;
    let rel = |got: f64, want: f64| ((got - want) / want).abs();
    let c = fit.coeffs;
    let coef_err = [rel(c.a, coeffs.a), rel(c.b, coeffs.b), rel(c.c, coeffs.c), rel(c.d, coeffs.d)];
    let worst_coef = coef_err.iter().copied().fold(0.0, f64::max);
    let (ephi, esig) = (rel(fit.ar1.phi, 0.9), rel(fit.ar1.sigma, 0.5));
    let pass = worst_coef < 0.01 && ephi < 0.02 && esig < 0.02;
    outcome(
        pass,
        format!(
            "{} points, worst coefficient rel err {:.3}% (< 1%), phi {:.3}% sigma {:.3}% (< 2%)",
            k * rows,
            100.0 * worst_coef,
            100.0 * ephi,
            100.0 * esig
        ),
    )
}

fn c6_poly_holdout() -> Outcome {
    let v = loglik_poly(&desk().holdout, poly(), true).unwrap().value();
    outcome((v - 4.98).abs() <= 0.3, format!("polynomial hold-out loglik {v:.3} (4.98 +- 0.3) on 1000 MTU, scale {DESK_SCALE}"))
}

fn c7_rnn_beats_poly() -> Outcome {
    let p = loglik_poly(&desk().holdout, poly(), true).unwrap().value();
    match rnn() {
        Ok(m) => {
            let r = loglik_rnn(&desk().holdout, m, true).unwrap().value();
            outcome(r > p, format!("RNN {r:.3} > polynomial {p:.3}; training log {}", log_path().display()))
        }
        Err(e) => outcome(false, format!("training failed: {e}; training log {}", log_path().display())),
    }
}

fn c8_poly_climatology() -> Outcome {
    let lt = long_truth();
    let m = poly();
    let n_steps = (LONG_RUN / DT).round() as usize;
    let mut noise = GridNoise::new(21, 0, 8);
    let sim = simulate(m, lt.traj.row(0), m.cold_state(8), 20.0, n_steps, 1, &mut noise, 21).unwrap();
    if let Some(t) = sim.blowup_time {
        return outcome(false, format!("polynomial blew up at t = {t}"));
    }
    let basis = truth_basis(&lt.traj).unwrap();
    let sec = climate_section(&basis, &lt.traj, &[("polynomial", &sim.trajectory)], DEFAULT_EPS).unwrap();
    let kl = sec.kl[0].x_hist.unwrap();
    let fifths_max = sec.kl[0].fifths.iter().copied().fold(0.0, f64::max);
    outcome(kl < 0.02, format!("KL(truth || polynomial) {kl:.4} (< 0.02) over {LONG_RUN} MTU, largest fifth {fifths_max:.4}"))
}

fn c9_regimes() -> Outcome {
    let lt = long_truth();
    let t = Instant::now();
    let b = truth_basis(&lt.traj).unwrap();
    let wn: Vec<usize> = b.eof.iter().take(4).map(|e| dominant_wavenumber(e)).collect();
    let secs = lt.secs + t.elapsed().as_secs_f64();
    let (e1, e2) = (b.explained[0], b.explained[1]);
    let gap = (e1 - e2).abs() / e1.max(e2);
    let pass = gap <= 0.10 && wn == [2, 2, 1, 1] && secs < 30.0;
    outcome(
        pass,
        format!("EOF1/EOF2 variance {e1:.2}/{e2:.2} (gap {:.1}% <= 10%), wavenumbers {wn:?} (2,2,1,1), {secs:.1}s incl. run (< 30s)", 100.0 * gap),
    )
}

fn c10_perfect_model() -> Outcome {
    let t = Instant::now();
    let cfg = L96Config::standard(20.0);
    let (m, n, horizon, sd) = (500, 40, 2.0, 2.0);
    let ics = truth_states(&cfg, &TruthState::random(&cfg, 13), m, 1.0, 10.0, 0.001).unwrap();
    let c = truth_ensemble_eval(&cfg, &ics, n, horizon, 0.001, DT, sd, 13).unwrap();
    let secs = t.elapsed().as_secs_f64();
    // Saturated part of the curves: the last quarter of the horizon.
    let idx: Vec<usize> = (0..c.lead_times.len()).filter(|&i| c.lead_times[i] >= 0.75 * horizon - 1e-9).collect();
    let avg = |v: &[f64]| idx.iter().map(|&i| v[i]).sum::<f64>() / idx.len() as f64;
    let ratio = avg(&c.spread) / avg(&c.error);
    let pass = (0.9..=1.1).contains(&ratio) && secs < 120.0;
    outcome(
        pass,
        format!("spread/error {ratio:.4} in [0.9, 1.1] (M={m}, N={n}, leads {:.1}-{horizon} MTU), {secs:.1}s (< 120s)", 0.75 * horizon),
    )
}

fn c11_flops() -> Outcome {
    let p = flop_count(&ModelKind::Polynomial { k: 8 }).total;
    let r = flop_count(&ModelKind::Rnn { k: 8, arch: RnnArch::default() }).total;
    let t = flop_count(&ModelKind::Truth { config: L96Config::standard(20.0), inner_steps: 5 }).total;
    outcome(p < r && r < t && r < 20_000, format!("polynomial {p} < RNN {r} < truth {t}, RNN < 20000"))
}

fn c12_explosion() -> Outcome {
    let start = desk().holdout.row(0).to_vec();
    let n_steps = (LONG_RUN / DT).round() as usize;
    let m = poly();
    let mut noise = GridNoise::new(28, 0, 8);
    let p = simulate(m, &start, m.cold_state(8), 28.0, n_steps, 1, &mut noise, 28).unwrap();
    let r = match rnn() {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("no trained RNN: {e}")),
    };
    let mut noise = GridNoise::new(28, 0, 8);
    let q = simulate(r, &start, r.cold_state(8), 28.0, n_steps, 1, &mut noise, 28).unwrap();
    let rnn_ok = q.blowup_time.is_none() && q.trajectory.data().iter().all(|v| v.is_finite());
    let (lo, hi) = q.trajectory.min_max();
    outcome(
        p.blowup_time.is_some() && rnn_ok,
        format!(
            "polynomial blow-up at {} MTU; RNN {} over {LONG_RUN} MTU, range [{lo:.1}, {hi:.1}]",
            p.blowup_time.map_or("none".into(), |t| format!("{t:.2}")),
            if rnn_ok { "finite" } else { "blew up" }
        ),
    )
}

type Criterion = (usize, &'static str, Option<f64>, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 12] = [
        (1, "change-of-variables likelihood oracle", Some(1.0), c1_change_of_variables),
        (2, "BPTT gradient vs central differences", Some(10.0), c2_gradient),
        (3, "RK4 convergence order", Some(10.0), c3_rk4_order),
        (4, "AR(1) chain statistics", Some(5.0), c4_ar1),
        (5, "polynomial fit recovery", Some(10.0), c5_poly_recovery),
        (6, "polynomial hold-out likelihood", None, c6_poly_holdout),
        (7, "RNN hold-out likelihood above polynomial", None, c7_rnn_beats_poly),
        (8, "polynomial climatology KL", None, c8_poly_climatology),
        (9, "regime structure of the truth", None, c9_regimes),
        (10, "perfect-model spread/error", None, c10_perfect_model),
        (11, "FLOP ordering", None, c11_flops),
        (12, "explosion at F=28", None, c12_explosion),
    ];
    let only: Option<Vec<usize>> =
        std::env::var("L96_ACCEPTANCE").ok().map(|s| s.split(',').filter_map(|v| v.trim().parse().ok()).collect());
    let mut failed = Vec::new();
    for (id, title, limit, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let t = Instant::now();
        let mut o = run();
        let secs = t.elapsed().as_secs_f64();
        if let Some(lim) = limit {
            if secs >= lim {
                o.pass = false;
                o.detail.push_str(&format!("; runtime {secs:.2}s over the {lim}s limit"));
            }
        }
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!("acceptance #{id:<2} {verdict}  {title}: {} [{secs:.1}s]", o.detail);
        if !o.pass {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: failed {failed:?}");
        std::process::exit(1);
    }
}
