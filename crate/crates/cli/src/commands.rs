use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use l96_core::dynamics::{generate_truth, Trajectory, TruthRun, TruthState};
use l96_core::evaluation::{
    climate_section, flop_table, holdout_likelihood_table, run_weather_eval, truth_basis, BlowupRecord, EvalReport,
    KlTable, ModelKind, NamedCurves, WeatherCurves,
};
use l96_core::io::{
    load_model, load_trajectory, read_json, save_model, save_trajectory, write_json, write_jsonl, AnyModel,
    CheckpointDocument, ModelDocument, ModelProvenance, TrajectoryMeta, TrajectoryProvenance,
};
use l96_core::models::{simulate as run_model, GridNoise, Surrogate};
use l96_core::training::{fit_polynomial, train_rnn_with, Likelihood, ResidualDataset, TrainCheckpoint};
use l96_core::{par, Error};

use crate::config::{self, resolve, InitialState};
use crate::{CliError, GlobalArgs};

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn load_traj(path: &Path) -> Result<(Trajectory, TrajectoryMeta), CliError> {
    if !path.exists() {
        return Err(io_err(path, "no such file"));
    }
    Ok(load_trajectory(path)?)
}

fn load_any_model(path: &Path) -> Result<(AnyModel, ModelDocument), CliError> {
    if !path.exists() {
        return Err(io_err(path, "no such file"));
    }
    Ok(load_model(path)?)
}

fn data_dir(cfg: &Option<PathBuf>, g: &GlobalArgs) -> PathBuf {
    cfg.clone().unwrap_or_else(|| g.out.clone())
}

fn scaled_duration(d: f64, scale: f64, dt_save: f64) -> f64 {
    // Whole number of saved rows.
    ((d * scale) / dt_save).round().max(1.0) * dt_save
}

pub fn gen_truth(g: &GlobalArgs) -> Result<(), CliError> {
    let mut c: config::GenTruthConfig = config::load(g.config.as_deref())?;
    if let Some(s) = g.seed {
        c.seed = s;
    }
    if let Some(s) = g.scale {
        c.scale = s;
    }
    config::check_scale(c.scale)?;
    if c.pieces.is_empty() {
        return Err(CliError::Config("no trajectory pieces requested".into()));
    }
    let jobs: Vec<(usize, config::TruthPiece)> = c.pieces.iter().cloned().enumerate().collect();
    let runs = par::map(&jobs, |(i, p)| {
        let mut sys = c.system;
        sys.forcing = p.forcing;
        let run = TruthRun {
            duration: scaled_duration(p.duration, c.scale, c.dt_save),
            dt_inner: c.dt_inner,
            dt_save: c.dt_save,
            burn_in: c.burn_in,
        };
        let seed = c.seed.wrapping_mul(1_000_003).wrapping_add(*i as u64);
        let init = TruthState::random(&sys, seed);
        generate_truth(&sys, &run, &init, seed).map(|t| (t, sys)).map_err(|e| match e {
            Error::BlowUp { .. } => CliError::BlowUp(format!("F = {}: {e}", p.forcing)),
            other => CliError::Core(other),
        })
    });
    for ((_, p), r) in jobs.iter().zip(runs) {
        let (traj, sys) = r?;
        let path = g.out.join(format!("{}.l96", p.name));
        save_trajectory(&path, &traj, TrajectoryProvenance::truth(sys, c.burn_in, c.dt_inner))?;
        println!("{}: F = {}, {} rows, seed {}", path.display(), p.forcing, traj.len(), traj.seed);
    }
    Ok(())
}

fn load_dataset(dir: &Path, files: &[String]) -> Result<(ResidualDataset, Vec<String>, Vec<u64>), CliError> {
    if files.is_empty() {
        return Err(CliError::Config("no data files listed".into()));
    }
    let mut trajs = Vec::new();
    let mut seeds = Vec::new();
    for f in files {
        let (t, _) = load_traj(&resolve(dir, f))?;
        seeds.push(t.seed);
        trajs.push(t);
    }
    let refs: Vec<&Trajectory> = trajs.iter().collect();
    Ok((ResidualDataset::from_trajectories(&refs)?, files.to_vec(), seeds))
}

pub fn fit_poly(g: &GlobalArgs) -> Result<(), CliError> {
    let c: config::FitPolyConfig = config::load(g.config.as_deref())?;
    let dir = data_dir(&c.data_dir, g);
    let (ds, files, seeds) = load_dataset(&dir, &c.train)?;
    let fit = fit_polynomial(&ds)?;
    let mut prov = ModelProvenance::new("fit-poly");
    prov.data_files = files;
    prov.seeds = seeds;
    let path = g.out.join(&c.model_out);
    save_model(&path, &ModelDocument::from_fit(&fit, prov))?;
    let m = &fit.model;
    println!(
        "{}: a = {:.6} b = {:.6} c = {:.6} d = {:.6} phi = {:.6} sigma = {:.6} R^2 = {:.4}",
        path.display(),
        m.coeffs.a,
        m.coeffs.b,
        m.coeffs.c,
        m.coeffs.d,
        m.ar1.phi,
        m.ar1.sigma,
        fit.r_squared
    );
    Ok(())
}

pub fn train_rnn(g: &GlobalArgs) -> Result<(), CliError> {
    let mut c: config::TrainRnnConfig = config::load(g.config.as_deref())?;
    if let Some(s) = g.seed {
        c.training.seed = s;
    }
    c.training.validate()?;
    let dir = data_dir(&c.data_dir, g);
    let (train, train_files, mut seeds) = load_dataset(&dir, &c.train)?;
    let (valid, valid_files, valid_seeds) = load_dataset(&dir, &c.valid)?;
    seeds.extend(valid_seeds);

    let mut prov = ModelProvenance::new("train-rnn");
    prov.data_files = train_files.into_iter().chain(valid_files).collect();
    prov.seeds = seeds;
    prov.epochs = Some(c.training.epochs);
    prov.train_config = Some(c.training.clone());

    let ck_path = g.out.join(&c.checkpoint);
    let log_path = g.out.join(&c.log);
    let model_path = g.out.join(&c.model_out);
    let mut ck: Option<TrainCheckpoint> = if c.resume && ck_path.exists() {
        let doc: CheckpointDocument = read_json(&ck_path)?;
        let ck = doc.to_checkpoint()?;
        println!("resuming from {} at epoch {}", ck_path.display(), ck.next_epoch);
        Some(ck)
    } else {
        None
    };
    let start = ck.as_ref().map_or(0, |k| k.next_epoch);
    // One epoch per call so the checkpoint on disk is never more than an epoch old.
    for epoch in start..c.training.epochs {
        let mut step_cfg = c.training.clone();
        step_cfg.epochs = epoch + 1;
        let out = train_rnn_with(&train, &valid, &step_cfg, ck.take(), &mut |r| {
            println!(
                "epoch {:>4}  train {:>10.5}  valid {:>10.5}  lr {:.1e}  {:>8.1}s",
                r.epoch, r.train_loss, r.valid_loss, r.lr, r.wall_time
            );
        })?;
        write_json(&ck_path, &CheckpointDocument::new(&out.checkpoint, prov.clone()))?;
        write_jsonl(&log_path, &out.log)?;
        save_model(&model_path, &ModelDocument::from_rnn(&out.best, prov.clone()))?;
        ck = Some(out.checkpoint);
    }
    match ck {
        Some(k) => {
            if start >= c.training.epochs {
                write_jsonl(&log_path, &k.log)?;
                save_model(&model_path, &ModelDocument::from_rnn(&k.best, prov))?;
            }
            println!("{}: best validation loss {:.5}", model_path.display(), k.best_valid);
            Ok(())
        }
        None => Err(CliError::Config("epochs must be at least 1".into())),
    }
}

fn simulate_with<M: Surrogate>(
    m: &M,
    c: &config::SimulateConfig,
    dir: &Path,
    forcing: f64,
) -> Result<l96_core::models::SimOutcome, CliError> {
    let dt = m.dt();
    let n_steps = ((c.duration * c.scale) / dt).round() as usize;
    let (x0, state, k) = match &c.initial {
        InitialState::Zero => (vec![0.0; c.k], m.cold_state(c.k), c.k),
        InitialState::Truth { file, index, spinup } => {
            let (t, _) = load_traj(&resolve(dir, file))?;
            if (t.dt_save - dt).abs() > 1e-9 * dt {
                return Err(CliError::Config(format!("truth interval {} differs from model dt {dt}", t.dt_save)));
            }
            if *index < *spinup || *index >= t.len() {
                return Err(CliError::Config(format!("initial index {index} needs {spinup} earlier rows in {file}")));
            }
            let hist = t.slice(index - spinup, spinup + 1)?;
            (t.row(*index).to_vec(), m.warm_state(&hist, *spinup)?, t.k())
        }
    };
    let mut noise = GridNoise::new(c.seed, 0, k);
    Ok(run_model(m, &x0, state, forcing, n_steps, c.save_every, &mut noise, c.seed)?)
}

pub fn simulate(g: &GlobalArgs) -> Result<(), CliError> {
    let mut c: config::SimulateConfig = config::load(g.config.as_deref())?;
    if let Some(s) = g.seed {
        c.seed = s;
    }
    if let Some(s) = g.scale {
        c.scale = s;
    }
    config::check_scale(c.scale)?;
    if c.save_every == 0 || !(c.duration > 0.0) {
        return Err(CliError::Config("duration and save_every must be positive".into()));
    }
    let dir = data_dir(&c.data_dir, g);
    let model_path = resolve(&dir, &c.model);
    let (model, _) = load_any_model(&model_path)?;
    let forcing = c.forcing.unwrap_or(match &model {
        AnyModel::Polynomial(m) => m.forcing,
        AnyModel::Rnn(m) => m.forcing,
    });
    let out = match &model {
        AnyModel::Polynomial(m) => simulate_with(m, &c, &dir, forcing)?,
        AnyModel::Rnn(m) => simulate_with(m, &c, &dir, forcing)?,
    };
    let name = c.out_file.clone().unwrap_or_else(|| format!("sim_{}_F{forcing}.l96", model.name()));
    let path = g.out.join(name);
    let prov = TrajectoryProvenance::surrogate(model.name(), Some(model_path.display().to_string()), out.blowup_time);
    save_trajectory(&path, &out.trajectory, prov)?;
    println!("{}: {} rows", path.display(), out.trajectory.len());
    match out.blowup_time {
        Some(t) => Err(CliError::BlowUp(format!("{} model at F = {forcing} exploded at t = {t} MTU", model.name()))),
        None => Ok(()),
    }
}

fn check_dt(what: &str, dt: f64, reference: &mut Option<f64>) -> Result<(), CliError> {
    match reference {
        Some(r) if (*r - dt).abs() > 1e-12 * r.abs() => {
            Err(CliError::Config(format!("{what} has interval {dt}, other inputs use {r}")))
        }
        Some(_) => Ok(()),
        None => {
            *reference = Some(dt);
            Ok(())
        }
    }
}

fn weather_for(m: &AnyModel, truth: &Trajectory, spec: &l96_core::evaluation::EnsembleSpec) -> Result<WeatherCurves, CliError> {
    Ok(match m {
        AnyModel::Polynomial(p) => run_weather_eval(p, truth, spec)?,
        AnyModel::Rnn(r) => run_weather_eval(r, truth, spec)?,
    })
}

pub fn evaluate(g: &GlobalArgs) -> Result<(), CliError> {
    let c: config::EvaluateConfig = config::load(g.config.as_deref())?;
    let scale = g.scale.or(c.scale).unwrap_or(1.0);
    config::check_scale(scale)?;
    let dir = data_dir(&c.data_dir, g);
    let mut dt_ref = None;

    let mut models: BTreeMap<String, AnyModel> = BTreeMap::new();
    let mut order = Vec::new();
    for e in &c.models {
        let (m, _) = load_any_model(&resolve(&dir, &e.file))?;
        check_dt(&e.file, m.dt(), &mut dt_ref)?;
        if models.insert(e.name.clone(), m).is_some() {
            return Err(CliError::Config(format!("model name {} listed twice", e.name)));
        }
        order.push(e.name.clone());
    }
    let model = |name: &str| models.get(name).ok_or_else(|| CliError::Config(format!("unknown model {name}")));

    let mut report = EvalReport::default();
    let mut k_grid = None;

    if let Some(w) = &c.weather {
        let (truth, _) = load_traj(&resolve(&dir, &w.truth))?;
        check_dt(&w.truth, truth.dt_save, &mut dt_ref)?;
        k_grid = Some(truth.k());
        let mut spec = w.spec;
        spec.n_init = ((spec.n_init as f64 * scale).round() as usize).max(1);
        if let Some(s) = g.seed.or(c.seed) {
            spec.seed = s;
        }
        let names = if w.models.is_empty() { order.clone() } else { w.models.clone() };
        for name in names {
            let curves = weather_for(model(&name)?, &truth, &spec)?;
            report.weather.push(NamedCurves { model: name, forcing: truth.forcing, curves });
        }
    }

    if !c.climate.is_empty() {
        let mut basis = None;
        for sec in &c.climate {
            let (truth, _) = load_traj(&resolve(&dir, &sec.truth))?;
            check_dt(&sec.truth, truth.dt_save, &mut dt_ref)?;
            k_grid = Some(truth.k());
            if basis.is_none() {
                basis = Some(truth_basis(&truth)?);
            }
            let mut runs = Vec::new();
            for r in &sec.runs {
                let (t, meta) = load_traj(&resolve(&dir, &r.file))?;
                check_dt(&r.file, t.dt_save, &mut dt_ref)?;
                match meta.provenance.blowup_time {
                    Some(time) => report.blowups.push(BlowupRecord { model: r.model.clone(), forcing: t.forcing, time }),
                    None => runs.push((r.model.clone(), t)),
                }
            }
            let refs: Vec<(&str, &Trajectory)> = runs.iter().map(|(n, t)| (n.as_str(), t)).collect();
            report.climate.push(climate_section(basis.as_ref().unwrap(), &truth, &refs, c.smoothing_eps)?);
        }
        report.kl_table = KlTable::from_sections(&report.climate);
        report.regime_basis = basis;
    }

    if let Some(l) = &c.likelihood {
        let mut holdouts = Vec::new();
        for f in &l.holdouts {
            let (t, _) = load_traj(&resolve(&dir, f))?;
            check_dt(f, t.dt_save, &mut dt_ref)?;
            k_grid = Some(t.k());
            holdouts.push(t);
        }
        let entries: Vec<(&str, &(dyn Likelihood + Sync))> = order
            .iter()
            .map(|n| {
                let m: &(dyn Likelihood + Sync) = match &models[n] {
                    AnyModel::Polynomial(p) => p,
                    AnyModel::Rnn(r) => r,
                };
                (n.as_str(), m)
            })
            .collect();
        let refs: Vec<&Trajectory> = holdouts.iter().collect();
        let mut table = holdout_likelihood_table(&entries, &refs, l.window);
        for b in &report.blowups {
            table.flag_explosion(&b.model, b.forcing);
        }
        report.likelihood_table = Some(table);
    }

    if c.cost {
        let k = k_grid.unwrap_or(8);
        let mut entries: Vec<(&str, ModelKind)> = order
            .iter()
            .map(|n| {
                let kind = match &models[n] {
                    AnyModel::Polynomial(_) => ModelKind::Polynomial { k },
                    AnyModel::Rnn(r) => ModelKind::Rnn { k, arch: r.arch.clone() },
                };
                (n.as_str(), kind)
            })
            .collect();
        let dt = dt_ref.unwrap_or(0.005);
        let mut sys = l96_core::dynamics::L96Config::standard(20.0);
        sys.k = k;
        entries.push(("truth", ModelKind::Truth { config: sys, inner_steps: (dt / 0.001).round() as u64 }));
        report.flop_table = Some(flop_table(&entries));
    }

    report.write(&g.out)?;
    println!("{}", g.out.join("report.json").display());
    for row in &report.kl_table.rows {
        let vals: Vec<String> = row.values.iter().map(|v| v.map_or("-".into(), |v| format!("{v:.4}"))).collect();
        println!("KL {:<12} {}", row.model, vals.join("  "));
    }
    if let Some(t) = &report.likelihood_table {
        for row in &t.rows {
            let vals: Vec<String> = row.values.iter().map(|v| v.map_or("-inf".into(), |v| format!("{v:.3}"))).collect();
            println!("loglik {:<12} {}", row.model, vals.join("  "));
        }
    }
    Ok(())
}

pub fn cost(g: &GlobalArgs) -> Result<(), CliError> {
    let c: config::CostConfig = config::load(g.config.as_deref())?;
    c.arch.validate()?;
    c.truth.validate()?;
    let run = TruthRun { duration: c.dt_save, dt_inner: c.dt_inner, dt_save: c.dt_save, burn_in: 0.0 };
    let inner_steps = run.steps_per_save()? as u64;
    let table = flop_table(&[
        ("polynomial", ModelKind::Polynomial { k: c.k }),
        ("rnn", ModelKind::Rnn { k: c.k, arch: c.arch.clone() }),
        ("truth", ModelKind::Truth { config: c.truth, inner_steps }),
    ]);
    let path = g.out.join("cost.json");
    write_json(&path, &table)?;
    println!("{}", table.convention);
    for r in &table.rows {
        println!("{:<12} {:>10}", r.model, r.flops);
    }
    Ok(())
}
