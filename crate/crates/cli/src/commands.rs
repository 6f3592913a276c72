use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use ethd_sim::calibration::{compare, fit_quadratic, run_sweep, write_sweep_csv};
use ethd_sim::contact::{plate_by_label, shore_to_modulus, simulate_session, TapRig};
use ethd_sim::device::{simulate_constant_load, write_trajectory_csv, DeviceParams, DeviceState};
use ethd_sim::dsp::{extract_features, write_features_csv, FeatureRow};
use ethd_sim::experiment::{run_experiment1, run_experiment2};
use ethd_sim::psychophysics::{
    cell_summaries, wf_by_plate, wf_by_reference, write_grid_csv, Summary,
};
use ethd_sim::signal::{Sidecar, TapSignal};
use ethd_sim::stats::{
    one_way_anova, permutation_pairwise, two_way_anova, AnovaTable, FactorialTable, TwoWayModel,
};
use log::{info, warn};
use serde::Serialize;

use crate::config::{Format, Manifest, RunConfig};
use crate::error::{CliError, Result};

pub struct Ctx {
    pub cfg: RunConfig,
    pub command: Vec<String>,
}

impl Ctx {
    fn out(&self) -> Result<&Path> {
        let dir = self.cfg.out.as_path();
        fs::create_dir_all(dir)
            .map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
        Ok(dir)
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>> {
        let path = self.out()?.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        File::create(&path)
            .map(BufWriter::new)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }

    fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let mut f = self.create(name)?;
        serde_json::to_writer_pretty(&mut f, value)?;
        writeln!(f)?;
        f.flush()?;
        Ok(())
    }

    fn manifest(&self) -> Result<()> {
        self.json(
            "manifest.json",
            &Manifest::new(self.command.clone(), &self.cfg),
        )
    }

    fn csv(&self, name: &str) -> Result<csv::Writer<BufWriter<File>>> {
        Ok(csv::Writer::from_writer(self.create(name)?))
    }
}

fn num(v: f64) -> String {
    format!("{v}")
}

pub fn calibrate(ctx: &Ctx, trajectory: bool) -> Result<()> {
    let cfg = &ctx.cfg;
    let device = &cfg.device;
    let samples = run_sweep(device, &cfg.calibration, cfg.seed)?;
    let comp = fit_quadratic(&samples).map_err(|e| {
        let diag: Vec<String> = samples
            .iter()
            .map(|s| format!("{}->{:.1}", s.k_des, s.k_measured))
            .collect();
        CliError::Numeric(format!(
            "{e}; samples (k_des->k_measured): {}",
            diag.join(", ")
        ))
    })?;
    let rows = compare(device, &comp, &cfg.calibration, cfg.seed)?;
    match cfg.format {
        Format::Csv => write_sweep_csv(&samples, ctx.create("calibration.csv")?)?,
        Format::Json => ctx.json("calibration.json", &samples)?,
    }
    ctx.json("compensator.json", &comp)?;
    let mut w = ctx.csv("calibration_comparison.csv")?;
    w.write_record(["k_des_Npm", "uncompensated_Npm", "compensated_Npm"])?;
    for r in &rows {
        w.write_record([num(r.k_des), num(r.before), num(r.after)])?;
    }
    w.flush()?;
    if trajectory {
        let k = 1000.0;
        let state = DeviceState::at_rest(comp.compensate(k))
            .map_err(|e| CliError::Config(e.to_string()))?;
        let traj = simulate_constant_load(&state, -cfg.calibration.weight, device, 3.0)
            .map_err(|e| CliError::Numeric(e.to_string()))?;
        write_trajectory_csv(&traj, ctx.create("trajectory.csv")?)?;
    }
    ctx.manifest()?;
    let [a, b, c] = comp.coeffs;
    println!(
        "compensator k_cmd = {a:.6e}·k² {b:+.6}·k {c:+.4} (rms {:.3} N/m, {} points)",
        comp.residual_rms, comp.sample_count
    );
    Ok(())
}

pub fn exp1(ctx: &Ctx, save_signals: &[(String, f64)]) -> Result<()> {
    let cfg = &ctx.cfg;
    let res = run_experiment1(&cfg.exp1, &cfg.device, &cfg.compensator(), cfg.seed)?;
    match cfg.format {
        Format::Csv => write_features_csv(ctx.create("features.csv")?, &res.rows)?,
        Format::Json => {
            let rows: Vec<_> = res
                .rows
                .iter()
                .map(|r| serde_json::json!({ "plate": r.plate, "k_des_Npm": r.k_des, "features": r.features }))
                .collect();
            ctx.json("features.json", &rows)?
        }
    }

    let mut w = ctx.csv("sc_vs_stiffness.csv")?;
    w.write_record(["plate", "k_des_Npm", "sc_Hz"])?;
    for r in &res.rows {
        w.write_record([
            r.plate.clone(),
            num(r.k_des),
            num(r.features.spectral_centroid),
        ])?;
    }
    w.flush()?;

    let mut w = ctx.csv("dominant_frequency_grid.csv")?;
    w.write_record(["plate", "k_des_Npm", "domfreq_Hz", "dommag"])?;
    for r in &res.rows {
        w.write_record([
            r.plate.clone(),
            num(r.k_des),
            num(r.features.dominant_freq),
            num(r.features.dominant_mag),
        ])?;
    }
    w.flush()?;

    let by_plate = |f: fn(&FeatureRow) -> f64| -> Vec<(String, Summary, f64, f64)> {
        res.plates
            .iter()
            .map(|p| {
                let v: Vec<f64> = res
                    .rows
                    .iter()
                    .filter(|r| r.plate == p.label)
                    .map(f)
                    .collect();
                let min = v.iter().copied().fold(f64::INFINITY, f64::min);
                let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                (p.label.clone(), Summary::of(&v), min, max)
            })
            .collect()
    };
    let mut w = ctx.csv("sc_magnitude_by_plate.csv")?;
    w.write_record(["plate", "n", "sc_mag_mean", "sc_mag_sd"])?;
    for (p, s, _, _) in by_plate(|r| r.features.sc_magnitude) {
        w.write_record([p, s.n.to_string(), num(s.mean), num(s.sd)])?;
    }
    w.flush()?;

    let mut w = ctx.csv("sc_by_hardness.csv")?;
    w.write_record([
        "plate",
        "shore_scale",
        "shore_value",
        "modulus_Pa",
        "n",
        "sc_mean_Hz",
        "sc_sd_Hz",
        "sc_min_Hz",
        "sc_max_Hz",
    ])?;
    for (plate, (_, s, min, max)) in res
        .plates
        .iter()
        .zip(by_plate(|r| r.features.spectral_centroid))
    {
        w.write_record([
            plate.label.clone(),
            plate.shore_scale.to_string(),
            num(plate.shore_value),
            num(shore_to_modulus(plate)?),
            s.n.to_string(),
            num(s.mean),
            num(s.sd),
            num(min),
            num(max),
        ])?;
    }
    w.flush()?;

    if !res.failures.is_empty() {
        let mut w = ctx.csv("failures.csv")?;
        w.write_record(["plate", "k_des_Npm", "error"])?;
        for f in &res.failures {
            w.write_record([f.plate.clone(), num(f.k_des), f.error.clone()])?;
        }
        w.flush()?;
        warn!(
            "{} of {} cells failed",
            res.failures.len(),
            res.failures.len() + res.rows.len()
        );
    }

    match &res.anova {
        Some(Ok(table)) => write_anova(ctx, table)?,
        Some(Err(e)) => warn!("ANOVA not computed: {e}"),
        None => println!("ANOVA skipped: needs at least two plates and two stiffness levels with every cell present"),
    }

    if !save_signals.is_empty() {
        let rig = TapRig {
            profile: cfg.exp1.profile.clone(),
            device: cfg.device.clone(),
            compensator: cfg.compensator(),
            sample_rate: cfg.exp1.sample_rate,
        };
        let plates = cfg.exp1.plate_set()?;
        for (label, k) in save_signals {
            let plate = plate_by_label(label)?;
            let pi = plates.iter().position(|p| p.label == plate.label);
            let ki = cfg.exp1.stiffness.iter().position(|s| s == k);
            let (pi, ki) = match (pi, ki) {
                (Some(p), Some(k)) => (p, k),
                _ => {
                    return Err(CliError::Config(format!(
                        "signal {label}:{k} is not a cell of the grid"
                    )))
                }
            };
            let seed = ethd_sim::seed::derive(
                cfg.seed,
                &[ethd_sim::seed::tag("exp1"), pi as u64, ki as u64],
            );
            let sig = simulate_session(&plate, *k, &rig, &cfg.exp1.session, seed)?;
            let stem = format!("signals/{}_{}", plate.label, k);
            sig.write_csv(ctx.create(&format!("{stem}.csv"))?)?;
            sig.write_sidecar(ctx.create(&format!("{stem}.json"))?)?;
        }
    }
    ctx.manifest()?;
    println!(
        "{} cells analysed, {} failed",
        res.rows.len(),
        res.failures.len()
    );
    Ok(())
}

fn write_anova(ctx: &Ctx, table: &AnovaTable) -> Result<()> {
    match ctx.cfg.format {
        Format::Csv => {
            let mut f = ctx.create("anova.csv")?;
            table.write_csv(&mut f)?;
            f.flush()?;
        }
        Format::Json => ctx.json("anova.json", table)?,
    }
    let text = table.to_string();
    let mut f = ctx.create("anova.txt")?;
    f.write_all(text.as_bytes())?;
    f.flush()?;
    print!("{text}");
    Ok(())
}

pub fn exp2(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let (_, rows) = run_experiment2(&cfg.exp2, cfg.seed)?;
    match cfg.format {
        Format::Csv => write_grid_csv(ctx.create("grid.csv")?, &rows)?,
        Format::Json => {
            let v: Vec<_> = rows
                .iter()
                .map(|r| {
                    serde_json::json!({
                        "plate": r.plate, "ref_k": r.ref_k, "run": r.run,
                        "result": r.result, "n_trials": r.n_trials, "converged": r.converged(),
                    })
                })
                .collect();
            ctx.json("grid.json", &v)?
        }
    }

    let mut w = ctx.csv("trials.csv")?;
    w.write_record([
        "plate", "ref_k", "run", "trial", "order", "test_k", "correct", "reversal", "forgiven",
    ])?;
    for r in &rows {
        for t in &r.state.log {
            w.write_record([
                r.plate.clone(),
                num(r.ref_k),
                r.run.to_string(),
                t.trial.to_string(),
                t.order.to_string(),
                num(t.test_k),
                (t.correct as u8).to_string(),
                (t.reversal as u8).to_string(),
                (t.forgiven as u8).to_string(),
            ])?;
        }
    }
    w.flush()?;

    let mut runs: BTreeMap<(usize, u64), usize> = BTreeMap::new();
    for r in &rows {
        *runs.entry((r.plate_index, r.ref_k.to_bits())).or_default() += 1;
    }
    let mut w = ctx.csv("cell_summary.csv")?;
    w.write_record(["plate", "ref_k", "runs", "converged", "wf_mean", "wf_sd"])?;
    let mut nonconv = 0;
    for (key, (plate, s)) in cell_summaries(&rows) {
        let total = runs[&key];
        nonconv += total - s.n;
        w.write_record([
            plate,
            num(f64::from_bits(key.1)),
            total.to_string(),
            s.n.to_string(),
            num(s.mean),
            num(s.sd),
        ])?;
    }
    w.flush()?;

    let mut w = ctx.csv("wf_by_plate.csv")?;
    w.write_record(["plate", "n", "wf_mean", "wf_sd"])?;
    for (p, s) in wf_by_plate(&rows) {
        println!("{p}: WF {:.4} ± {:.4} (n = {})", s.mean, s.sd, s.n);
        w.write_record([p, s.n.to_string(), num(s.mean), num(s.sd)])?;
    }
    w.flush()?;
    let mut w = ctx.csv("wf_by_reference.csv")?;
    w.write_record(["ref_k", "n", "wf_mean", "wf_sd"])?;
    for (k, s) in wf_by_reference(&rows) {
        w.write_record([num(k), s.n.to_string(), num(s.mean), num(s.sd)])?;
    }
    w.flush()?;
    if nonconv > 0 {
        warn!("{nonconv} of {} runs did not converge", rows.len());
    }
    println!("{} runs, {} not converged", rows.len(), nonconv);
    ctx.manifest()
}

fn read_signal(path: &Path, sample_rate: Option<f64>) -> Result<TapSignal> {
    let sidecar = path.with_extension("json");
    let meta: Option<Sidecar> = if sidecar.exists() {
        let f = File::open(&sidecar)?;
        Some(serde_json::from_reader(f)?)
    } else {
        None
    };
    let f = File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut sig = TapSignal::read_csv(f, sample_rate.or(meta.as_ref().map(|m| m.sample_rate)))?;
    if let Some(m) = meta {
        sig.meta = m.meta;
    }
    Ok(sig)
}

pub fn analyze(ctx: &Ctx, input: &Path, sample_rate: Option<f64>) -> Result<()> {
    let sig = read_signal(input, sample_rate)?;
    info!("{} samples at {} Hz", sig.len(), sig.sample_rate);
    let f = extract_features(&sig, &ctx.cfg.analyze)?;
    let row = FeatureRow {
        plate: sig.meta.plate.clone().unwrap_or_default(),
        k_des: sig.meta.k_des.unwrap_or(f64::NAN),
        features: f.clone(),
    };
    match ctx.cfg.format {
        Format::Csv => write_features_csv(ctx.create("features.csv")?, std::slice::from_ref(&row))?,
        Format::Json => ctx.json("features.json", &f)?,
    }
    ctx.manifest()?;
    println!(
        "SC {:.2} Hz (|X| {:.4}), dominant {:.2} Hz (|X| {:.4}), duration {:.2} ms ({}), {} taps",
        f.spectral_centroid,
        f.sc_magnitude,
        f.dominant_freq,
        f.dominant_mag,
        f.duration * 1e3,
        f.duration_class
            .map(|c| c.to_string())
            .unwrap_or_else(|| "unclassified".into()),
        f.taps_detected
    );
    Ok(())
}

type Record = (Vec<String>, f64);

/// Long-format table: one or two factor columns, value last.
fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Record>)> {
    let f = File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut r = csv::Reader::from_reader(f);
    let headers: Vec<String> = r.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if !(2..=3).contains(&headers.len()) {
        return Err(CliError::Config(format!(
            "expected 2 or 3 columns (factors then value), got {}",
            headers.len()
        )));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let last = rec.len() - 1;
        let v: f64 = rec[last].trim().parse().map_err(|_| {
            CliError::Config(format!("row {}: {:?} is not a number", i + 1, &rec[last]))
        })?;
        rows.push((
            rec.iter()
                .take(last)
                .map(|s| s.trim().to_string())
                .collect(),
            v,
        ));
    }
    Ok((headers, rows))
}

pub fn stats(ctx: &Ctx, input: &Path) -> Result<()> {
    let (headers, rows) = read_table(input)?;
    if headers.len() == 2 {
        let mut labels: Vec<String> = Vec::new();
        let mut groups: Vec<Vec<f64>> = Vec::new();
        for (k, v) in rows {
            match labels.iter().position(|l| *l == k[0]) {
                Some(i) => groups[i].push(v),
                None => {
                    labels.push(k[0].clone());
                    groups.push(vec![v]);
                }
            }
        }
        let mut table = one_way_anova(&groups)?;
        table.effects[0].source = headers[0].clone();
        write_anova(ctx, &table)?;
        let pw = permutation_pairwise(&groups, ctx.cfg.stats.n_perm, ctx.cfg.seed)?;
        let mut w = ctx.csv("pairwise.csv")?;
        w.write_record(["group_a", "group_b", "mean_diff", "p_raw", "p_bonferroni"])?;
        for p in &pw.pairs {
            w.write_record([
                labels[p.i].clone(),
                labels[p.j].clone(),
                num(p.mean_diff),
                num(p.p_raw),
                num(p.p_adj),
            ])?;
        }
        w.flush()?;
    } else {
        let t = FactorialTable::from_records(
            &headers[0],
            &headers[1],
            rows.iter().map(|(k, v)| (k[0].as_str(), k[1].as_str(), *v)),
        );
        let model = if ctx.cfg.stats.interaction {
            TwoWayModel::WithInteraction
        } else {
            TwoWayModel::Additive
        };
        write_anova(ctx, &two_way_anova(&t, model)?)?;
    }
    ctx.manifest()
}

pub fn device_preset(name: &str) -> Result<DeviceParams> {
    match name {
        "default" => Ok(DeviceParams::default()),
        "identity" => Ok(DeviceParams::identity()),
        other => Err(CliError::Config(format!(
            "unknown device preset {other:?} (default, identity)"
        ))),
    }
}
