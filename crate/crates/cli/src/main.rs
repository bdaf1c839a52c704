mod args;

use std::fs;
use std::path::Path;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::parser::ValueSource;
use clap::{ArgMatches, CommandFactory, FromArgMatches};
use log::info;
use varpool::data::{load_manifest, resample_splits, synth_generate, write_cohort, SynthCohort, SynthParams};
use varpool::interpret::{emit_report, explain_bag};
use varpool::mil::parse_kv;
use varpool::training::{
    cross_validate, load_checkpoint, mean_std, model_gradient_suite, predict_risks, save_checkpoint,
    GRADCHECK_TOLERANCE,
};
use varpool::{concordance_index, Cohort, ModelConfig, ModelFamily, TrainConfig};

use args::{Cli, Command, EvalCmd, GeneratorArgs, GradcheckCmd, InterpretCmd, Source, SynthCmd, TrainCmd, CONFIG_FLAGS};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let matches = Cli::command().get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    let sub = matches.subcommand().map(|(_, m)| m).expect("subcommand is required");
    let result = match &cli.command {
        Command::Synth(cmd) => synth(cmd),
        Command::Train(cmd) => train(cmd, sub),
        Command::Eval(cmd) => eval(cmd),
        Command::Interpret(cmd) => interpret(cmd),
        Command::Gradcheck(cmd) => gradcheck(cmd),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn generate(g: &GeneratorArgs, seed: u64) -> Result<SynthCohort> {
    let params = SynthParams {
        n_patients: g.patients,
        n_min: g.min_instances,
        n_max: g.max_instances,
        dim: g.dim,
        beta: g.beta,
        censor_rate: g.censor_rate,
        seed,
    };
    Ok(synth_generate(&params)?)
}

fn load_cohort(source: &Source, g: &GeneratorArgs, seed: u64) -> Result<Cohort> {
    match &source.manifest {
        Some(path) => load_manifest(path).with_context(|| format!("loading manifest {}", path.display())),
        None => Ok(generate(g, seed)?.cohort),
    }
}

fn synth(cmd: &SynthCmd) -> Result<ExitCode> {
    let synth = generate(&cmd.generator, cmd.seed)?;
    let manifest = write_cohort(&synth.cohort, &cmd.out)?;
    let oracle = concordance_index(&synth.oracle_scores(), &synth.cohort.labels())?;
    println!("wrote {} bags and {}", synth.cohort.len(), manifest.display());
    println!("oracle c-index: {oracle:.4}");
    Ok(ExitCode::SUCCESS)
}

/// Defaults, then the `--config` file, then flags given on the command line.
fn resolve_config(cmd: &TrainCmd, m: &ArgMatches, input_dim: usize) -> Result<(ModelConfig, TrainConfig)> {
    let mut mc = ModelConfig::default();
    let mut tc = TrainConfig::default();
    let mut file_seed = None;
    let mut apply = |key: &str, value: &str| -> Result<()> {
        match mc.set(key, value) {
            Ok(()) => Ok(()),
            Err(model_err) => tc
                .set(key, value)
                .map_err(|_| anyhow::anyhow!("{model_err}"))
                .with_context(|| format!("setting `{key}`")),
        }
    };
    if let Some(path) = &cmd.config.config {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        for (k, v) in parse_kv(&text).map_err(anyhow::Error::msg)? {
            match k.as_str() {
                // a saved config.txt names the data dimension and seed it was trained with
                "input_dim" if v.trim() != input_dim.to_string() => {
                    bail!("{} sets input_dim={v} but the cohort has d={input_dim}", path.display())
                }
                "input_dim" => {}
                "seed" => file_seed = Some(v.trim().parse().context("parsing seed")?),
                _ => apply(&k, &v).with_context(|| format!("in {}", path.display()))?,
            }
        }
    }
    for (id, key) in CONFIG_FLAGS {
        if m.value_source(id) == Some(ValueSource::CommandLine) {
            let value: &String = m.get_one(id).expect("flag has a value");
            apply(key, value)?;
        }
    }
    let seed = match file_seed {
        Some(s) if m.value_source("seed") != Some(ValueSource::CommandLine) => s,
        _ => cmd.seed,
    };
    mc.input_dim = input_dim;
    mc.seed = seed;
    tc.seed = seed;
    mc.validate()?;
    tc.validate()?;
    Ok((mc, tc))
}

fn train(cmd: &TrainCmd, m: &ArgMatches) -> Result<ExitCode> {
    let cohort = load_cohort(&cmd.source, &cmd.generator, cmd.seed)?;
    let (mc, tc) = resolve_config(cmd, m, cohort.dim())?;
    if cmd.folds == 0 {
        bail!("--folds must be at least 1");
    }
    let splits = resample_splits(cohort.len(), cmd.train_fraction, cmd.folds, tc.seed)?;
    info!("training {} splits on {} patients", splits.len(), cohort.len());
    let report = cross_validate(&cohort, &splits, &mc, &tc, cmd.parallel_folds)?;

    fs::create_dir_all(&cmd.out).with_context(|| format!("creating {}", cmd.out.display()))?;
    let metrics_path = cmd.out.join("metrics.csv");
    let mut w = csv::Writer::from_path(&metrics_path)?;
    w.write_record(["fold", "train_cindex", "test_cindex"])?;
    for f in &report.folds {
        w.write_record([f.fold.to_string(), f.train_cindex.to_string(), f.test_cindex.to_string()])?;
        save_checkpoint(&cmd.out.join(format!("fold{}.vpc", f.fold)), &f.model)?;
        println!("fold {}: train {:.4} test {:.4}", f.fold, f.train_cindex, f.test_cindex);
    }
    w.flush()?;

    let (train_m, train_s) = mean_std(&report.train_scores());
    let (test_m, test_s) = report.test_summary();
    let summary = format!(
        "split,mean_x100,std_x100\ntrain,{:.2},{:.2}\ntest,{test_m:.2},{test_s:.2}\n",
        100.0 * train_m,
        100.0 * train_s
    );
    fs::write(cmd.out.join("summary.csv"), summary)?;
    fs::write(cmd.out.join("config.txt"), format!("{}{}", mc.to_kv(), tc.to_kv()))?;
    println!("test c-index x100: {test_m:.2} ± {test_s:.2} over {} splits", report.folds.len());
    Ok(ExitCode::SUCCESS)
}

fn check_dims(model: &ModelConfig, cohort: &Cohort, checkpoint: &Path) -> Result<()> {
    if model.input_dim != cohort.dim() {
        bail!(
            "dimension mismatch: checkpoint {} expects d={}, cohort has d={}",
            checkpoint.display(),
            model.input_dim,
            cohort.dim()
        );
    }
    Ok(())
}

fn eval(cmd: &EvalCmd) -> Result<ExitCode> {
    let model = load_checkpoint(&cmd.checkpoint)?;
    let cohort = load_cohort(&cmd.source, &cmd.generator, cmd.seed)?;
    check_dims(model.config(), &cohort, &cmd.checkpoint)?;
    let all: Vec<usize> = (0..cohort.len()).collect();
    let risks = predict_risks(&model, &cohort, &all)?;
    let c = concordance_index(&risks, &cohort.labels())?;
    if let Some(out) = &cmd.out {
        let mut w = csv::Writer::from_path(out)?;
        w.write_record(["patient_id", "risk"])?;
        for (p, r) in cohort.patients().iter().zip(&risks) {
            w.write_record([p.id().to_string(), r.to_string()])?;
        }
        w.flush()?;
    }
    println!("c-index: {c:.4} ({:.2} x100) on {} patients", 100.0 * c, cohort.len());
    Ok(ExitCode::SUCCESS)
}

fn interpret(cmd: &InterpretCmd) -> Result<ExitCode> {
    let model = load_checkpoint(&cmd.checkpoint)?;
    let cohort = load_cohort(&cmd.source, &cmd.generator, cmd.seed)?;
    check_dims(model.config(), &cohort, &cmd.checkpoint)?;
    let reports = cohort
        .patients()
        .iter()
        .map(|p| explain_bag(&model, p.id(), &p.bag.features, cmd.top_m, cmd.per_bucket))
        .collect::<Result<Vec<_>, _>>()?;
    emit_report(&reports, &cmd.out)?;
    if model.config().family == ModelFamily::DeepSets {
        println!("attention ranking: unavailable (deep_sets weights every instance equally)");
    } else {
        println!("attention ranking: top_attention.csv");
    }
    println!("wrote SAsqR tables for {} patients to {}", reports.len(), cmd.out.display());
    Ok(ExitCode::SUCCESS)
}

fn gradcheck(cmd: &GradcheckCmd) -> Result<ExitCode> {
    let cases = model_gradient_suite(cmd.seed)?;
    let mut failed = 0;
    for c in &cases {
        let status = if c.passed() { "ok" } else { "FAILED" };
        println!("{:<60} params {:>4}  max rel error {:.3e}  {status}", c.label(), c.n_params, c.max_rel_error);
        failed += usize::from(!c.passed());
    }
    println!("{} of {} configurations within {GRADCHECK_TOLERANCE:e}", cases.len() - failed, cases.len());
    Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
