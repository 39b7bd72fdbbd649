//! Command dispatch for the `rfs` binary.
//!
//! Every experiment is driven by a flat key-value config (see `gen-config`)
//! plus a handful of flags; outputs are CSV/SVG files stamped with the
//! artifact version and the resolved seed, and every run can be replayed
//! from its run record.

use rfs_core::fields::{Latent, TimePoint, VelocityField};
use rfs_core::harness::csvio::{read_numeric_csv, write_csv};
use rfs_core::harness::svg::{render_plot, Series};
use rfs_core::harness::{
    default_config_text, resolve, ConfigMap, Experiment, RunRecord, SeedMetric, TaskKind,
};
use rfs_core::numerics::Rng;
use rfs_core::sampler::{reflective_displacement, rf_sample, standard_sample, Trajectory};
use rfs_core::theory::{
    check_first_order, check_second_order, sweep, SweepAxis, NOISE_STREAM,
};
use rfs_core::train::{save_checkpoint, train, MlpField, TRAIN_STREAM};
use rfs_core::VERSION;
use std::path::{Path, PathBuf};
use std::time::Instant;

const USAGE: &str = "\
rfs — flow-matching sampler with reflective guidance

USAGE:
  rfs gen-config [--task gm|linear|mlp] [--out FILE]
  rfs train --config FILE [--out CKPT] [--loss-csv FILE]
  rfs sample standard|rf [--config FILE] [--seed N] [--gamma G]
                         [--out FILE] [--record FILE] [--diagnostics]
  rfs verify-first-order [--field linear|gm] [--config FILE]
                         [--probes N] [--seed N] [--out FILE]
  rfs verify-second-order [--config FILE] [--seed N] [--grid a,b,c,…]
                          [--out FILE] [--csv FILE]
  rfs sweep --axis gamma|gap|rf-fraction|steps --values a,b,c,…
            [--config FILE] [--seeds N] [--workers N] [--out FILE]
  rfs dump-trajectory --record FILE --seed N [--out FILE]
  rfs plot --in CSV --out SVG [--x COL] [--y COL1,COL2,…] [--scatter]
  rfs help

The RF_SEED environment variable overrides the config's run.seed.
";

enum CliError {
    Usage(String),
    Runtime(String),
}

impl From<rfs_core::Error> for CliError {
    fn from(e: rfs_core::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

type CliResult = Result<(), CliError>;

/// Runs one command line (without the binary name) and returns the exit
/// status: 0 on success, 1 on runtime errors, 2 on usage errors.
pub fn cli_dispatch<I>(args: I) -> i32
where
    I: IntoIterator<Item = String>,
{
    let args: Vec<String> = args.into_iter().collect();
    match run(&args) {
        Ok(()) => 0,
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprint!("{USAGE}");
            2
        }
    }
}

fn run(args: &[String]) -> CliResult {
    let Some(command) = args.first() else {
        return Err(CliError::Usage("missing subcommand".into()));
    };
    let rest = &args[1..];
    match command.as_str() {
        "gen-config" => cmd_gen_config(rest),
        "train" => cmd_train(rest),
        "sample" => cmd_sample(rest),
        "verify-first-order" => cmd_verify_first_order(rest),
        "verify-second-order" => cmd_verify_second_order(rest),
        "sweep" => cmd_sweep(rest),
        "dump-trajectory" => cmd_dump_trajectory(rest),
        "plot" => cmd_plot(rest),
        "help" | "--help" | "-h" => {
            print!("{USAGE}");
            Ok(())
        }
        other => Err(CliError::Usage(format!("unknown subcommand `{other}`"))),
    }
}

struct Flags {
    positional: Vec<String>,
    named: Vec<(String, String)>,
    switches: Vec<String>,
}

impl Flags {
    fn get(&self, name: &str) -> Option<&str> {
        self.named
            .iter()
            .rev()
            .find(|(k, _)| k == name)
            .map(|(_, v)| v.as_str())
    }

    fn has(&self, name: &str) -> bool {
        self.switches.iter().any(|s| s == name)
    }

    fn get_u64(&self, name: &str) -> Result<Option<u64>, CliError> {
        match self.get(name) {
            None => Ok(None),
            Some(raw) => raw
                .parse::<u64>()
                .map(Some)
                .map_err(|_| CliError::Usage(format!("--{name} expects an unsigned integer"))),
        }
    }

    fn get_usize(&self, name: &str) -> Result<Option<usize>, CliError> {
        match self.get(name) {
            None => Ok(None),
            Some(raw) => raw
                .parse::<usize>()
                .map(Some)
                .map_err(|_| CliError::Usage(format!("--{name} expects a non-negative integer"))),
        }
    }

    fn get_f64(&self, name: &str) -> Result<Option<f64>, CliError> {
        match self.get(name) {
            None => Ok(None),
            Some(raw) => raw
                .parse::<f64>()
                .map(Some)
                .map_err(|_| CliError::Usage(format!("--{name} expects a real number"))),
        }
    }

    fn values_list(&self, name: &str) -> Result<Option<Vec<f64>>, CliError> {
        match self.get(name) {
            None => Ok(None),
            Some(raw) => {
                let mut out = Vec::new();
                for piece in raw.split(',') {
                    out.push(piece.trim().parse::<f64>().map_err(|_| {
                        CliError::Usage(format!("--{name}: `{}` is not a number", piece.trim()))
                    })?);
                }
                Ok(Some(out))
            }
        }
    }
}

fn parse_flags(args: &[String], named: &[&str], switches: &[&str]) -> Result<Flags, CliError> {
    let mut flags = Flags {
        positional: Vec::new(),
        named: Vec::new(),
        switches: Vec::new(),
    };
    let mut it = args.iter().peekable();
    while let Some(arg) = it.next() {
        if let Some(name) = arg.strip_prefix("--") {
            if switches.contains(&name) {
                flags.switches.push(name.to_string());
            } else if named.contains(&name) {
                let value = it
                    .next()
                    .ok_or_else(|| CliError::Usage(format!("--{name} needs a value")))?;
                flags.named.push((name.to_string(), value.clone()));
            } else {
                return Err(CliError::Usage(format!("unknown flag --{name}")));
            }
        } else {
            flags.positional.push(arg.clone());
        }
    }
    Ok(flags)
}

/// Loads the experiment from --config (or a built-in default) and applies
/// the seed override precedence: --seed flag over RF_SEED over run.seed.
fn load_experiment(flags: &Flags, default_kind: TaskKind) -> Result<(Experiment, PathBuf), CliError> {
    let (text, base_dir) = match flags.get("config") {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Runtime(format!("{path}: {e}")))?;
            let dir = Path::new(path)
                .parent()
                .map(|p| p.to_path_buf())
                .unwrap_or_else(|| PathBuf::from("."));
            (text, dir)
        }
        None => (default_config_text(default_kind), PathBuf::from(".")),
    };
    let cfg = ConfigMap::parse(&text)?;
    let mut experiment = resolve(&cfg)?;
    if let Some(seed) = flags.get_u64("seed")? {
        experiment.seed = seed;
    }
    Ok((experiment, base_dir))
}

fn write_file(path: &str, contents: &str) -> CliResult {
    std::fs::write(path, contents).map_err(|e| CliError::Runtime(format!("{path}: {e}")))
}

fn cmd_gen_config(args: &[String]) -> CliResult {
    let flags = parse_flags(args, &["task", "out"], &[])?;
    let kind = match flags.get("task").unwrap_or("gm") {
        "gm" => TaskKind::Gm,
        "linear" => TaskKind::Linear,
        "mlp" => TaskKind::Mlp,
        other => return Err(CliError::Usage(format!("--task `{other}` is not gm|linear|mlp"))),
    };
    let text = format!("# rfs-version: {VERSION}\n{}", default_config_text(kind));
    match flags.get("out") {
        Some(path) => {
            write_file(path, &text)?;
            println!("wrote {path}");
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_train(args: &[String]) -> CliResult {
    let flags = parse_flags(args, &["config", "out", "loss-csv", "seed"], &[])?;
    let (mut experiment, base_dir) = load_experiment(&flags, TaskKind::Mlp)?;
    if let Some(seed) = flags.get_u64("seed")? {
        experiment.train.seed = seed;
    }
    let task = experiment.gm_task()?;
    let mut init_rng = Rng::new(experiment.train.seed, TRAIN_STREAM.wrapping_add(1));
    let field = MlpField::new(
        task.field.state_dim(),
        task.field.classes(),
        &experiment.mlp_hidden,
        &mut init_rng,
    );
    let started = Instant::now();
    let (trained, curve) = train(field, &task, &experiment.train)?;
    let ckpt_path = match flags.get("out") {
        Some(path) => PathBuf::from(path),
        None => {
            let rel = experiment
                .mlp_checkpoint
                .clone()
                .unwrap_or_else(|| PathBuf::from("mlp.ckpt"));
            if rel.is_absolute() {
                rel
            } else {
                base_dir.join(rel)
            }
        }
    };
    let mut bytes = Vec::new();
    save_checkpoint(&trained, experiment.train.seed, &mut bytes)?;
    std::fs::write(&ckpt_path, &bytes)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", ckpt_path.display())))?;
    if let Some(path) = flags.get("loss-csv") {
        let rows: Vec<Vec<String>> = curve
            .iter()
            .map(|(i, l)| vec![i.to_string(), l.to_string()])
            .collect();
        let mut buf = Vec::new();
        write_csv(
            &mut buf,
            VERSION,
            experiment.train.seed,
            &["iteration", "loss"],
            &rows,
        )?;
        write_file(path, &String::from_utf8_lossy(&buf))?;
    }
    let (first, last) = (
        curve.first().map(|c| c.1).unwrap_or(f64::NAN),
        curve.last().map(|c| c.1).unwrap_or(f64::NAN),
    );
    println!(
        "trained {} iterations in {:.1}s, loss {first:.4} -> {last:.4}, checkpoint {}",
        experiment.train.iterations,
        started.elapsed().as_secs_f64(),
        ckpt_path.display()
    );
    Ok(())
}

fn trajectory_for_seed(
    experiment: &Experiment,
    field: &dyn VelocityField,
    mode: &str,
    seed: u64,
    diagnostics: bool,
) -> Result<Trajectory, CliError> {
    let mut cfg = experiment.sampler_config()?;
    cfg.record_diagnostics = diagnostics || cfg.record_diagnostics;
    let mut noise_rng = Rng::new(seed, NOISE_STREAM);
    let noise = Latent::new(noise_rng.normal_vec(field.state_dim()));
    let objective = experiment.objective()?;
    let traj = match mode {
        "standard" => standard_sample(field, &noise, &cfg)?,
        "rf" => rf_sample(field, &noise, &cfg, Some(objective.as_ref()))?,
        other => return Err(CliError::Usage(format!("mode `{other}` is not standard|rf"))),
    };
    Ok(traj)
}

fn cmd_sample(args: &[String]) -> CliResult {
    let flags = parse_flags(
        args,
        &["config", "seed", "gamma", "out", "record"],
        &["diagnostics"],
    )?;
    let Some(mode) = flags.positional.first().cloned() else {
        return Err(CliError::Usage("sample needs a mode: standard|rf".into()));
    };
    let (mut experiment, base_dir) = load_experiment(&flags, TaskKind::Gm)?;
    if let Some(gamma) = flags.get_f64("gamma")? {
        experiment.spec.guidance.gamma = gamma;
        experiment
            .source
            .set("guidance.gamma", &gamma.to_string());
    }
    experiment
        .source
        .set("run.seed", &experiment.seed.to_string());
    let field = experiment.load_field(&base_dir)?;
    let started = Instant::now();
    let traj = trajectory_for_seed(
        &experiment,
        field.as_ref(),
        &mode,
        experiment.seed,
        flags.has("diagnostics"),
    )?;
    let objective = experiment.objective()?;
    let final_j = objective.value(traj.final_latent().vec(), TimePoint::new(1.0)?);

    let out = flags.get("out").unwrap_or("trajectory.csv").to_string();
    let mut buf = Vec::new();
    traj.write_csv(&mut buf, VERSION, experiment.seed)?;
    write_file(&out, &String::from_utf8_lossy(&buf))?;

    if let Some(record_path) = flags.get("record") {
        let record = RunRecord {
            version: VERSION.to_string(),
            mode: mode.clone(),
            wall_ms: started.elapsed().as_millis(),
            metrics: vec![SeedMetric {
                seed: experiment.seed,
                final_j,
                nfe: traj.nfe,
                trajectory: Some(out.clone()),
            }],
            config: experiment.source.clone(),
        };
        write_file(record_path, &record.to_text())?;
    }
    println!(
        "{mode} run: seed {}, {} steps, {} field evaluations, final J = {final_j}, wrote {out}",
        experiment.seed, traj.t_steps, traj.nfe
    );
    Ok(())
}

fn cmd_verify_first_order(args: &[String]) -> CliResult {
    let flags = parse_flags(args, &["field", "config", "probes", "seed", "out"], &[])?;
    let kind = match flags.get("field") {
        None | Some("gm") => TaskKind::Gm,
        Some("linear") => TaskKind::Linear,
        Some(other) => {
            return Err(CliError::Usage(format!("--field `{other}` is not linear|gm")))
        }
    };
    let (experiment, base_dir) = load_experiment(&flags, kind)?;
    let probes = flags.get_usize("probes")?.unwrap_or(100);
    let field = experiment.load_field(&base_dir)?;
    let objective = experiment.objective()?;
    let cfg = experiment.sampler_config()?;
    let report = check_first_order(
        field.as_ref(),
        objective.as_ref(),
        &cfg,
        probes,
        experiment.seed,
    )?;
    let text = format!(
        "# rfs-version: {VERSION}\n# seed: {}\n{}",
        experiment.seed,
        report.to_text()
    );
    let out = flags.get("out").unwrap_or("first-order-report.txt").to_string();
    write_file(&out, &text)?;
    println!(
        "first-order check: {} probes, ascent fraction {:.4}, residual {:.3e}, wrote {out}",
        report.probes, report.ascent_fraction, report.proportionality_residual
    );
    Ok(())
}

fn cmd_verify_second_order(args: &[String]) -> CliResult {
    let flags = parse_flags(args, &["config", "seed", "grid", "out", "csv"], &[])?;
    let (experiment, base_dir) = load_experiment(&flags, TaskKind::Gm)?;
    let grid = flags.values_list("grid")?.unwrap_or_else(|| {
        (0..=20).map(|i| 0.25 * i as f64).collect()
    });
    let field = experiment.load_field(&base_dir)?;
    let objective = experiment.objective()?;
    let cfg = experiment.sampler_config()?;

    // probe: the mid-schedule state of a plain run, with the reflective
    // displacement there as the merge direction
    let mut noise_rng = Rng::new(experiment.seed, NOISE_STREAM);
    let noise = Latent::new(noise_rng.normal_vec(field.state_dim()));
    let traj = standard_sample(field.as_ref(), &noise, &cfg)?;
    let k = cfg.steps / 2;
    let x = traj.latents[k].clone();
    let t = TimePoint::at_step(k, cfg.steps)?;
    let d = reflective_displacement(field.as_ref(), &x, k, &cfg)?;
    let report = check_second_order(
        |p| objective.value(p, t),
        x.vec(),
        &d,
        &grid,
    )?;
    let text = format!(
        "# rfs-version: {VERSION}\n# seed: {}\n{}",
        experiment.seed,
        report.to_text()
    );
    let out = flags.get("out").unwrap_or("second-order-report.txt").to_string();
    write_file(&out, &text)?;
    if let Some(csv_path) = flags.get("csv") {
        let mut buf = Vec::new();
        report.write_csv(&mut buf, VERSION, experiment.seed)?;
        write_file(csv_path, &String::from_utf8_lossy(&buf))?;
    }
    println!(
        "second-order check: empirical gamma* {} (closed {:?}), r2 {:.6}, wrote {out}",
        report.gamma_star_empirical, report.gamma_star_closed, report.quadratic_fit_r2
    );
    Ok(())
}

fn cmd_sweep(args: &[String]) -> CliResult {
    let flags = parse_flags(
        args,
        &["axis", "values", "config", "seeds", "workers", "seed", "out"],
        &[],
    )?;
    let axis_raw = flags
        .get("axis")
        .ok_or_else(|| CliError::Usage("sweep needs --axis".into()))?;
    let axis = SweepAxis::parse(axis_raw)
        .ok_or_else(|| CliError::Usage(format!("--axis `{axis_raw}` is not gamma|gap|rf-fraction|steps")))?;
    let values = flags
        .values_list("values")?
        .ok_or_else(|| CliError::Usage("sweep needs --values".into()))?;
    let (mut experiment, base_dir) = load_experiment(&flags, TaskKind::Gm)?;
    if let Some(n) = flags.get_usize("seeds")? {
        experiment.seed_count = n;
    }
    if let Some(w) = flags.get_usize("workers")? {
        experiment.workers = w;
    }
    let field = experiment.load_field(&base_dir)?;
    let objective = experiment.objective()?;
    let seeds = experiment.seed_list();
    let table = sweep(
        field.as_ref(),
        objective.as_ref(),
        &experiment.spec,
        axis,
        &values,
        &seeds,
        experiment.workers,
    )?;
    let out = flags
        .get("out")
        .map(|s| s.to_string())
        .unwrap_or_else(|| format!("sweep-{}.csv", axis.label()));
    let mut buf = Vec::new();
    table.write_csv(&mut buf, VERSION, experiment.seed)?;
    write_file(&out, &String::from_utf8_lossy(&buf))?;
    println!(
        "sweep over {}: {} values x {} seeds, wrote {out}",
        axis.label(),
        values.len(),
        seeds.len()
    );
    Ok(())
}

fn cmd_dump_trajectory(args: &[String]) -> CliResult {
    let flags = parse_flags(args, &["record", "seed", "out"], &[])?;
    let record_path = flags
        .get("record")
        .ok_or_else(|| CliError::Usage("dump-trajectory needs --record".into()))?;
    let seed = flags
        .get_u64("seed")?
        .ok_or_else(|| CliError::Usage("dump-trajectory needs --seed".into()))?;
    let text = std::fs::read_to_string(record_path)
        .map_err(|e| CliError::Runtime(format!("{record_path}: {e}")))?;
    let record = RunRecord::parse(&text)?;
    let experiment = resolve(&record.config)?;
    let base_dir = Path::new(record_path)
        .parent()
        .map(|p| p.to_path_buf())
        .unwrap_or_else(|| PathBuf::from("."));
    let field = experiment.load_field(&base_dir)?;
    let traj = trajectory_for_seed(&experiment, field.as_ref(), &record.mode, seed, true)?;
    let objective = experiment.objective()?;
    let final_j = objective.value(traj.final_latent().vec(), TimePoint::new(1.0)?);
    if let Some(metric) = record.metrics.iter().find(|m| m.seed == seed) {
        if metric.final_j.to_bits() != final_j.to_bits() || metric.nfe != traj.nfe {
            return Err(CliError::Runtime(format!(
                "replay mismatch for seed {seed}: recorded J = {} / nfe = {}, replayed J = {final_j} / nfe = {}",
                metric.final_j, metric.nfe, traj.nfe
            )));
        }
    }
    let out = flags.get("out").unwrap_or("trajectory-replay.csv").to_string();
    let mut buf = Vec::new();
    traj.write_csv(&mut buf, VERSION, seed)?;
    write_file(&out, &String::from_utf8_lossy(&buf))?;
    println!("replayed {} seed {seed}: final J = {final_j}, wrote {out}", record.mode);
    Ok(())
}

fn cmd_plot(args: &[String]) -> CliResult {
    let flags = parse_flags(args, &["in", "out", "x", "y"], &["scatter"])?;
    let input = flags
        .get("in")
        .ok_or_else(|| CliError::Usage("plot needs --in".into()))?;
    let out = flags
        .get("out")
        .ok_or_else(|| CliError::Usage("plot needs --out".into()))?;
    let text = std::fs::read_to_string(input)
        .map_err(|e| CliError::Runtime(format!("{input}: {e}")))?;
    let data = read_numeric_csv(&text)?;
    if data.header.len() < 2 {
        return Err(CliError::Runtime("csv needs at least two columns".into()));
    }
    let x_name = flags.get("x").unwrap_or(&data.header[0]).to_string();
    let xs = data
        .column(&x_name)
        .ok_or_else(|| CliError::Runtime(format!("no column `{x_name}`")))?
        .to_vec();
    let y_names: Vec<String> = match flags.get("y") {
        Some(raw) => raw.split(',').map(|s| s.trim().to_string()).collect(),
        None => data
            .header
            .iter()
            .filter(|h| **h != x_name)
            .take(1)
            .cloned()
            .collect(),
    };
    let mut series = Vec::new();
    for name in &y_names {
        let ys = data
            .column(name)
            .ok_or_else(|| CliError::Runtime(format!("no column `{name}`")))?;
        series.push(Series {
            label: name.clone(),
            points: xs.iter().copied().zip(ys.iter().copied()).collect(),
            scatter: flags.has("scatter"),
        });
    }
    let doc = render_plot(
        &series,
        input,
        &x_name,
        &y_names.join(", "),
        VERSION,
        0,
    );
    write_file(out, &doc)?;
    println!("wrote {out}");
    Ok(())
}
