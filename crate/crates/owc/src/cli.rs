//! Command-line front end. The binary is a thin shim over [`run`]; every
//! subcommand is also reachable programmatically for tests.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::channel::{apply_optical_noise, ChannelParams};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::eval::{
    baseline_codebook, sweep_snr, BaselineKind, SerSystem, SweepEntry,
};
use crate::imaging::ChannelFactory;
use crate::model_io::{codebook_to_csv, load_model, save_model};
use crate::models::{build_cae, build_fae, build_ook_ae, export_codebook, AeKind, AeModel};
use crate::rng::{stream, Domain};
use crate::tensor::Tensor;
use crate::train::{end_to_end_grad_check, multistage_train, TrainChannel};

#[derive(Parser)]
#[command(name = "owc", about = "Autoencoder-designed optical wireless transceivers", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root random seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for evaluation.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Comma-separated SNR list in dB (overrides the config).
    #[arg(long, value_delimiter = ',')]
    snr_list: Option<Vec<f64>>,
    /// Trained model file(s); two comma-separated paths form a
    /// low/high pair for SNR routing.
    #[arg(long, value_delimiter = ',')]
    model: Option<Vec<PathBuf>>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the multi-stage annealed training pipeline.
    Train(Common),
    /// Estimate SER of a trained model over an SNR list.
    Eval(Common),
    /// SER sweep of the model (if given) against classical baselines.
    Sweep(Common),
    /// Finite-difference check of the end-to-end gradient.
    Gradcheck(Common),
    /// Export the trained codebook as CSV.
    ExportCodebook(Common),
    /// Self-tests of the noise and imaging statistics.
    ChannelStats(Common),
}

/// Exit codes: 0 success, 1 runtime failure, 2 configuration error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    crate::tune_allocator();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles --help/--version as "errors" with success status
            if e.use_stderr() {
                eprintln!("{e}");
                return 2;
            }
            print!("{e}");
            return 0;
        }
    };
    let result = match &cli.command {
        Command::Train(c) => cmd_train(c),
        Command::Eval(c) => cmd_eval(c),
        Command::Sweep(c) => cmd_sweep(c),
        Command::Gradcheck(c) => cmd_gradcheck(c),
        Command::ExportCodebook(c) => cmd_export_codebook(c),
        Command::ChannelStats(c) => cmd_channel_stats(c),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Argument(_) => 2,
                _ => 1,
            }
        }
    }
}

fn load_config(c: &Common, required: bool) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(path) => ExperimentConfig::load(path)?,
        None if required => {
            return Err(Error::Config("this command requires --config".into()));
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &c.out {
        cfg.out_dir = out.display().to_string();
    }
    if let Some(list) = &c.snr_list {
        if list.is_empty() {
            return Err(Error::Config("--snr-list must not be empty".into()));
        }
        cfg.eval_snr_db = list.clone();
    }
    Ok(cfg)
}

fn build_model(cfg: &ExperimentConfig) -> Result<AeModel> {
    let mut rng = stream(cfg.seed, Domain::Init, 0);
    match cfg.model_kind.as_str() {
        "cae" => build_cae(cfg.m, cfg.l, cfg.t, &mut rng),
        "fae" => build_fae(cfg.m, cfg.l, cfg.t, &mut rng),
        "ook" => build_ook_ae(&cfg.ook_spec()?, &mut rng),
        other => Err(Error::Config(format!("unknown model kind `{other}`"))),
    }
}

fn factory_for(cfg: &ExperimentConfig) -> Result<Option<ChannelFactory>> {
    if cfg.model_kind == "ook" {
        Ok(None)
    } else {
        let (geom, cam) = cfg.geometry()?;
        Ok(Some(ChannelFactory::new(geom, cam)?))
    }
}

fn out_path(cfg: &ExperimentConfig, name: &str) -> Result<PathBuf> {
    let dir = Path::new(&cfg.out_dir);
    std::fs::create_dir_all(dir)?;
    Ok(dir.join(name))
}

fn rotation_of(cfg: &ExperimentConfig) -> Option<(f64, f64)> {
    if cfg.rotate && cfg.model_kind != "ook" {
        Some((cfg.rotation_lo_deg, cfg.rotation_hi_deg))
    } else {
        None
    }
}

fn cmd_train(c: &Common) -> Result<i32> {
    let cfg = load_config(c, true)?;
    let mut model = build_model(&cfg)?;
    let factory = factory_for(&cfg)?;
    let channel = match &factory {
        Some(f) => TrainChannel::Isc(f),
        None => TrainChannel::Direct,
    };
    let schedule = cfg.anneal_schedule()?;
    let train_cfg = cfg.train_config()?;
    let report = multistage_train(&mut model, &schedule, &train_cfg, channel)?;

    let model_path = out_path(&cfg, &format!("model-{}.owc", cfg.model_kind))?;
    save_model(&model_path, &model)?;
    let report_path = out_path(&cfg, "train.csv")?;
    std::fs::write(&report_path, report.to_csv())?;
    println!(
        "trained {} ({} stages, final hardness gap {:.4}) in {:.1}s",
        cfg.model_kind,
        schedule.deltas.len(),
        report.final_hardness_gap,
        report.wall_time_s
    );
    println!("model: {}", model_path.display());
    println!("report: {}", report_path.display());
    Ok(0)
}

fn single_model(c: &Common) -> Result<AeModel> {
    match c.model.as_deref() {
        Some([path]) => load_model(path),
        Some(_) => Err(Error::Argument("this command takes exactly one --model path".into())),
        None => Err(Error::Argument("this command requires --model".into())),
    }
}

fn system_for<'a>(
    model: &'a AeModel,
    factory: Option<&'a ChannelFactory>,
) -> Result<SerSystem<'a>> {
    match (model.kind, factory) {
        (AeKind::Ook, _) => Ok(SerSystem::AeDirect { model }),
        (_, Some(f)) => Ok(SerSystem::AeIsc { model, factory: f }),
        (_, None) => Err(Error::Config("image-sensor models need camera geometry".into())),
    }
}

fn cmd_eval(c: &Common) -> Result<i32> {
    let cfg = load_config(c, false)?;
    let model = single_model(c)?;
    let factory = match model.kind {
        AeKind::Ook => None,
        _ => factory_for(&cfg)?,
    };
    let system = system_for(&model, factory.as_ref())?;
    let rotation = if model.kind == AeKind::Ook { None } else { rotation_of(&cfg) };
    let entries = vec![SweepEntry::Fixed { name: model.kind.as_str().into(), system }];
    let table = sweep_snr(&entries, &cfg.eval_snr_db, rotation, cfg.eval_trials, cfg.seed, c.threads)?;
    let csv = table.to_csv();
    std::fs::write(out_path(&cfg, "eval.csv")?, &csv)?;
    print!("{csv}");
    Ok(0)
}

fn cmd_sweep(c: &Common) -> Result<i32> {
    let cfg = load_config(c, true)?;
    let models: Vec<AeModel> = match c.model.as_deref() {
        None => Vec::new(),
        Some(paths) => paths.iter().map(|p| load_model(p)).collect::<Result<_>>()?,
    };
    let factory = factory_for(&cfg)?;
    let rotation = rotation_of(&cfg);
    let mut rng = stream(cfg.seed, Domain::Codebook, 0);

    let mut entries: Vec<SweepEntry> = Vec::new();
    match models.as_slice() {
        [] => {}
        [m] => entries.push(SweepEntry::Fixed {
            name: format!("{}-ae", m.kind.as_str()),
            system: system_for(m, factory.as_ref())?,
        }),
        [low, high] => entries.push(SweepEntry::Routed {
            name: format!("{}-ae", low.kind.as_str()),
            low: system_for(low, factory.as_ref())?,
            high: system_for(high, factory.as_ref())?,
        }),
        _ => {
            return Err(Error::Argument("--model takes at most two paths (low,high)".into()));
        }
    }

    let baseline = if cfg.model_kind == "ook" {
        let d = cfg.ook_d.round();
        if (d - cfg.ook_d).abs() > 1e-9 {
            return Err(Error::Config("the CWC baseline needs an integral weight target".into()));
        }
        baseline_codebook(&BaselineKind::GreedyCwc { n: cfg.ook_n, d: d as usize }, cfg.m, &mut rng)?
    } else {
        let duty = Tensor::full(vec![cfg.l, cfg.l], cfg.dimming_duty);
        baseline_codebook(&BaselineKind::RandomOok { l: cfg.l, duty }, cfg.m, &mut rng)?
    };
    if cfg.model_kind == "ook" {
        entries.push(SweepEntry::Fixed {
            name: "cwc-ml".into(),
            system: SerSystem::MlDirect { codebook: &baseline },
        });
    } else {
        let f = factory.as_ref().expect("image-sensor sweep needs geometry");
        entries.push(SweepEntry::Fixed {
            name: "ook-ml-perfect-csi".into(),
            system: SerSystem::MlIsc { codebook: &baseline, factory: f, csi_error_deg: 0.0 },
        });
        if cfg.csi_error_deg > 0.0 {
            entries.push(SweepEntry::Fixed {
                name: "ook-ml-imperfect-csi".into(),
                system: SerSystem::MlIsc {
                    codebook: &baseline,
                    factory: f,
                    csi_error_deg: cfg.csi_error_deg,
                },
            });
        }
    }

    let table = sweep_snr(&entries, &cfg.eval_snr_db, rotation, cfg.eval_trials, cfg.seed, c.threads)?;
    let csv = table.to_csv();
    std::fs::write(out_path(&cfg, "sweep.csv")?, &csv)?;
    print!("{csv}");
    Ok(0)
}

const GRADCHECK_TOL: f64 = 1e-4;

fn cmd_gradcheck(c: &Common) -> Result<i32> {
    let cfg = load_config(c, false)?;
    let model = build_model(&cfg)?;
    let factory = factory_for(&cfg)?;
    let channel = match &factory {
        Some(f) => TrainChannel::Isc(f),
        None => TrainChannel::Direct,
    };
    let err = end_to_end_grad_check(
        &model,
        channel,
        &cfg.dimming_target()?,
        cfg.lambda,
        cfg.train_snr_db[0],
        2.0,
        2,
        4,
        cfg.seed,
    )?;
    println!("max relative gradient error: {err:.3e} (tolerance {GRADCHECK_TOL:.0e})");
    Ok(if err < GRADCHECK_TOL { 0 } else { 1 })
}

fn cmd_export_codebook(c: &Common) -> Result<i32> {
    let cfg = load_config(c, false)?;
    let model = single_model(c)?;
    let cb = export_codebook(&model, model.delta, 0.5)?;
    let csv = codebook_to_csv(&cb);
    std::fs::write(out_path(&cfg, "codebook.csv")?, &csv)?;
    print!("{csv}");
    eprintln!("mode: {:?}, hardness gap {:.4}", cb.mode, cb.hardness_gap);
    Ok(0)
}

fn cmd_channel_stats(c: &Common) -> Result<i32> {
    let cfg = load_config(c, false)?;
    let mut failures = 0;

    // Noise moments: empirical variance within 2% of sigma^2 (1 + psi^2 s).
    println!("noise model (sigma^2 = 0.1, psi^2 = {}):", cfg.channel_psi2);
    let ch = ChannelParams::new(0.1, cfg.channel_psi2)?;
    let n = 1_000_000usize;
    let mut rng = stream(cfg.seed, Domain::Eval, 0);
    for s in [0.0, 0.25, 1.0] {
        let signal = Tensor::full(vec![n], s);
        let noisy = apply_optical_noise(&signal, &ch, &mut rng)?;
        let mean = noisy.received.data().iter().sum::<f64>() / n as f64;
        let var = noisy.received.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / n as f64;
        let want = ch.variance_at(s);
        let var_ok = (var / want - 1.0).abs() < 0.02;
        let bias_ok = (mean - s).abs() < 4.0 * want.sqrt() / 1e3;
        if !var_ok || !bias_ok {
            failures += 1;
        }
        println!(
            "  s = {s:<4}: variance {var:.5} (model {want:.5}), mean {mean:+.5} -> {}",
            if var_ok && bias_ok { "ok" } else { "FAIL" }
        );
    }

    // Imaging geometry.
    if let Some(factory) = factory_for(&cfg)? {
        let (geom, cam) = cfg.geometry()?;
        let mag = cam.magnification(geom.distance_m);
        let pitch_px = mag * geom.pitch_m / cam.pixel_m;
        let span = pitch_px * (geom.l - 1) as f64;
        println!("imaging geometry:");
        println!("  magnification {mag:.4e}");
        let pitch_ok = (pitch_px - 1.88).abs() < 0.05;
        println!("  projected pitch {pitch_px:.3} px -> {}", if pitch_ok { "ok" } else { "FAIL" });
        let span_ok = (span - 7.5).abs() < 0.2;
        println!("  array span {span:.3} px -> {}", if span_ok { "ok" } else { "FAIL" });
        if !pitch_ok || !span_ok {
            failures += 1;
        }

        let h = factory.matrix(0.0)?;
        let all_on = Tensor::full(vec![cfg.l, cfg.l], 1.0);
        let img = crate::imaging::render_image(&all_on, &h)?;
        let peak = img.data().iter().cloned().fold(0.0, f64::max);
        let peak_ok = (peak - 1.0).abs() < 1e-9;
        println!("  all-on peak {peak:.6} -> {}", if peak_ok { "ok" } else { "FAIL" });
        if !peak_ok {
            failures += 1;
        }
    }

    Ok(if failures == 0 { 0 } else { 1 })
}
