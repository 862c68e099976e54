//! `zsr`: simulate data, train, infer, evaluate and report.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use zoomsr::align_lr::{flow_provider, FlowRequest};
use zoomsr::config::{parse_value, KeyValues};
use zoomsr::imaging::io::{read_png, write_png};
use zoomsr::imaging::{backward_warp, ImagePlane};
use zoomsr::sim::{load_training_pairs, make_training_pair, scene_seed, write_capture, SimConfig, TrainingPair};
use zoomsr::train_eval::report::{bar_chart_svg, crop_montage, loss_curve_svg, upscale_nearest};
use zoomsr::train_eval::{evaluate, infer, load_checkpoint, parse_trace_csv, save_checkpoint, trace_csv, train, TrainConfig};
use zoomsr::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "zsr", version, about = "Self-supervised reference-based zoom super-resolution")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render synthetic multi-zoom captures with truth flows.
    Simulate(SimulateArgs),
    /// Train a model and write a checkpoint and a loss log.
    Train(TrainArgs),
    /// Super-resolve one ultra-wide image with its telephoto reference.
    Infer(InferArgs),
    /// Score a checkpoint on a dataset (full and corner PSNR/SSIM).
    Eval(EvalArgs),
    /// Draw the loss curve, the ablation bar chart and a crop montage.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// Run directory for artifacts.
    #[arg(long, env = "ZSR_RUN_DIR", default_value = "runs/latest")]
    run_dir: PathBuf,
    /// `key = value` config file, applied over the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `key=value` override, applied last; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    /// Number of scenes [default: 20].
    #[arg(long)]
    scenes: Option<usize>,
    /// Base seed of the scene sequence [default: 0].
    #[arg(long)]
    seed: Option<u64>,
    /// Largest parallax displacement in ultra-wide pixels.
    #[arg(long)]
    parallax: Option<f64>,
    /// Gaussian noise standard deviation of the ultra-wide capture, in [0, 1] units.
    #[arg(long)]
    noise_sigma: Option<f64>,
    /// Relative per-channel color gain jitter.
    #[arg(long)]
    gain_jitter: Option<f64>,
    /// Side of the square scene in pixels; captures are `scene_size / r_t` pixels.
    #[arg(long)]
    scene_size: Option<usize>,
    /// `key = value` config file, applied over the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `key=value` override, applied last; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Dataset directory from `simulate`; simulated in memory when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Scenes to simulate when no dataset is given.
    #[arg(long, default_value_t = 20)]
    scenes: usize,
    /// dzsr (telephoto reference) or tzsr (wide and telephoto).
    #[arg(long)]
    mode: Option<String>,
    /// paper or desk.
    #[arg(long)]
    preset: Option<String>,
    /// none, flow or two_stage.
    #[arg(long)]
    align: Option<String>,
    /// l1, l1+sw or l1+losw.
    #[arg(long)]
    loss: Option<String>,
    /// w-then-t, t-then-w or concat-all.
    #[arg(long)]
    fusion: Option<String>,
    /// oracle, classical or external:<dir>.
    #[arg(long)]
    flow: Option<String>,
    /// Optimizer steps, overriding the preset's schedule.
    #[arg(long)]
    steps: Option<usize>,
    /// Seed of initialization and sampling.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct InferArgs {
    /// Run directory for artifacts.
    #[arg(long, env = "ZSR_RUN_DIR", default_value = "runs/latest")]
    run_dir: PathBuf,
    /// Checkpoint written by `train`.
    #[arg(long)]
    ckpt: PathBuf,
    /// Ultra-wide image to super-resolve.
    #[arg(long)]
    ultrawide: PathBuf,
    /// Telephoto reference image.
    #[arg(long)]
    tele: PathBuf,
    /// Wide-angle image; required by tzsr checkpoints.
    #[arg(long)]
    wide: Option<PathBuf>,
    /// Output path; defaults to `<run-dir>/<ultrawide stem>_sr.png`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Run directory for artifacts.
    #[arg(long, env = "ZSR_RUN_DIR", default_value = "runs/latest")]
    run_dir: PathBuf,
    /// Checkpoint written by `train`.
    #[arg(long)]
    ckpt: PathBuf,
    /// Dataset directory from `simulate`.
    #[arg(long)]
    data: PathBuf,
    /// Flow used to align the telephoto truth: oracle, classical or external:<dir>.
    #[arg(long, default_value = "oracle")]
    flow: String,
    /// CSV path; defaults to `<run-dir>/eval.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Run directory holding `loss.csv` (and optionally `eval.csv`, `samples/`).
    #[arg(long, env = "ZSR_RUN_DIR", default_value = "runs/latest")]
    run_dir: PathBuf,
    /// Further run directories whose `eval.csv` joins the bar chart.
    #[arg(long, num_args = 1..)]
    compare: Vec<PathBuf>,
    /// Metric column drawn in the bar chart.
    #[arg(long, default_value = "psnr_corner")]
    metric: String,
    /// Moving-average window of the loss curve.
    #[arg(long, default_value_t = 50)]
    window: usize,
}

fn usage(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.into(),
            source: e,
        })?;
    }
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })
}

/// Config file (if any) overlaid with `--set` entries.
fn layered(file: Option<&Path>, flags: KeyValues, overrides: &[String]) -> Result<KeyValues> {
    let mut kv = match file {
        Some(p) => KeyValues::load(p)?,
        None => KeyValues::new(),
    };
    kv.merge(&flags);
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| usage(format!("--set expects KEY=VALUE, got {o:?}")))?;
        kv.set(k.trim(), v.trim());
    }
    Ok(kv)
}

fn flag_kv(pairs: &[(&str, Option<String>)]) -> KeyValues {
    let mut kv = KeyValues::new();
    for (k, v) in pairs {
        if let Some(v) = v {
            kv.set(*k, v.clone());
        }
    }
    kv
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let flags = flag_kv(&[
        ("parallax_amplitude", a.parallax.map(|v| v.to_string())),
        ("noise_sigma", a.noise_sigma.map(|v| v.to_string())),
        ("gain_jitter", a.gain_jitter.map(|v| v.to_string())),
        ("scene_size", a.scene_size.map(|v| v.to_string())),
        ("scenes", a.scenes.map(|v| v.to_string())),
        ("seed", a.seed.map(|v| v.to_string())),
    ]);
    let kv = layered(a.config.as_deref(), flags, &a.overrides)?;
    let scenes: usize = kv.get("scenes").map_or(Ok(20), |v| parse_value("scenes", v))?;
    let seed: u64 = kv.get("seed").map_or(Ok(0), |v| parse_value("seed", v))?;
    let mut rest = KeyValues::new();
    for (k, v) in kv.iter().filter(|(k, _)| !matches!(*k, "scenes" | "seed")) {
        rest.set(k, v);
    }
    let sim = SimConfig::from_kv(&rest)?;
    let mut echo = sim.to_kv();
    echo.set("scenes", scenes.to_string());
    echo.set("seed", seed.to_string());
    write_text(&a.out.join("simulate.cfg"), &echo.to_text())?;
    for i in 0..scenes {
        let c = sim.capture(scene_seed(seed, i))?;
        write_capture(&a.out.join(&c.id), &c)?;
    }
    info!("wrote {scenes} scenes to {}", a.out.display());
    Ok(())
}

fn load_pairs(dir: &Path, cfg: &TrainConfig) -> Result<Vec<TrainingPair>> {
    load_training_pairs(dir, cfg.r_w, cfg.r_t() as u32)
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let flags = flag_kv(&[
        ("mode", a.mode),
        ("preset", a.preset),
        ("align", a.align),
        ("loss", a.loss),
        ("fusion", a.fusion),
        ("flow", a.flow),
        ("steps", a.steps.map(|v| v.to_string())),
        ("seed", a.seed.map(|v| v.to_string())),
    ]);
    let kv = layered(a.common.config.as_deref(), flags, &a.common.overrides)?;
    let cfg = TrainConfig::from_kv(&kv)?;
    let run = &a.common.run_dir;
    let source = match &a.data {
        Some(d) => format!("# data = {}\n", d.display()),
        None => format!("# data = simulated, {} scenes\n", a.scenes),
    };
    write_text(&run.join("config.txt"), &(source + &cfg.to_kv().to_text()))?;

    let pairs = match &a.data {
        Some(d) => load_pairs(d, &cfg)?,
        None => {
            let sim = SimConfig::default();
            (0..a.scenes)
                .map(|i| make_training_pair(&sim.capture(i as u64)?))
                .collect::<Result<Vec<_>>>()?
        }
    };
    let total = cfg.total_steps(pairs.len());
    let out = train(&pairs, cfg, |l| {
        if l.step % 100 == 0 || l.step + 1 == total {
            info!("step {}/{total} loss {:.5}", l.step + 1, l.loss);
        }
    })?;
    write_text(&run.join("loss.csv"), &trace_csv(&out.trace))?;
    save_checkpoint(&run.join("model.ckpt"), &out.model, true)?;
    info!("checkpoint written to {}", run.join("model.ckpt").display());
    Ok(())
}

fn cmd_infer(a: InferArgs) -> Result<()> {
    let mut echo = KeyValues::new();
    echo.set("ckpt", a.ckpt.display().to_string());
    echo.set("ultrawide", a.ultrawide.display().to_string());
    echo.set("tele", a.tele.display().to_string());
    if let Some(w) = &a.wide {
        echo.set("wide", w.display().to_string());
    }
    write_text(&a.run_dir.join("infer.cfg"), &echo.to_text())?;
    let mut model = load_checkpoint(&a.ckpt)?;
    model.detach();
    let u = read_png(&a.ultrawide)?;
    let t = read_png(&a.tele)?;
    let w = a.wide.as_ref().map(read_png).transpose()?;
    let y = infer(&model, &u, &t, w.as_ref())?;
    let out = a.out.unwrap_or_else(|| {
        let stem = a.ultrawide.file_stem().map_or("output".into(), |s| s.to_string_lossy().into_owned());
        a.run_dir.join(format!("{stem}_sr.png"))
    });
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.into(),
            source: e,
        })?;
    }
    write_png(&y, &out)?;
    info!("wrote {}", out.display());
    Ok(())
}

/// LR, output and flow-aligned truth of the first alignable pair.
fn sample_panels(model: &zoomsr::train_eval::Model, pairs: &[TrainingPair], flow: &str) -> Result<Option<[ImagePlane; 3]>> {
    let provider = flow_provider(flow)?;
    for p in pairs {
        let y = infer(model, &p.lr, &p.ref_t, p.ref_w.as_ref())?;
        let key = format!("{}.eval", p.id);
        let req = FlowRequest {
            moving: &p.gt,
            fixed: &y,
            truth: p.eval_flow.as_ref(),
            key: &key,
        };
        match provider.estimate(&req) {
            Ok(f) => return Ok(Some([p.lr.clone(), y, backward_warp(&p.gt, &f)?])),
            Err(Error::Flow(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(None)
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let mut echo = KeyValues::new();
    echo.set("ckpt", a.ckpt.display().to_string());
    echo.set("data", a.data.display().to_string());
    echo.set("flow", a.flow.clone());
    write_text(&a.run_dir.join("eval.cfg"), &echo.to_text())?;
    let mut model = load_checkpoint(&a.ckpt)?;
    model.detach();
    let pairs = load_pairs(&a.data, &model.cfg)?;
    let provider = flow_provider(&a.flow)?;
    let rep = evaluate(&model, &pairs, provider.as_ref())?;
    let out = a.out.unwrap_or_else(|| a.run_dir.join("eval.csv"));
    write_text(&out, &rep.to_csv())?;
    write_text(&a.run_dir.join("eval_bicubic.csv"), &rep.baseline_csv())?;
    if let Some(panels) = sample_panels(&model, &pairs, &a.flow)? {
        let dir = a.run_dir.join("samples");
        fs::create_dir_all(&dir).map_err(|e| Error::Io {
            path: dir.clone(),
            source: e,
        })?;
        for (img, name) in panels.iter().zip(["lr.png", "sr.png", "gt.png"]) {
            write_png(img, dir.join(name))?;
        }
    }
    match (rep.mean(), rep.baseline_mean()) {
        (Some(m), Some(b)) => info!(
            "corner PSNR {:.3} dB (bicubic {:.3} dB), full {:.3} dB (bicubic {:.3} dB), {} excluded",
            m.psnr_corner,
            b.psnr_corner,
            m.psnr_full,
            b.psnr_full,
            rep.excluded.len()
        ),
        _ => warn!("every sample was excluded"),
    }
    Ok(())
}

/// `metric` of the `mean` row of an evaluation CSV.
fn mean_metric(path: &Path, metric: &str) -> Result<f64> {
    let text = read_text(path)?;
    let mut rows = text.lines().filter(|l| !l.starts_with('#'));
    let header: Vec<&str> = rows
        .next()
        .ok_or_else(|| Error::Format(format!("{}: empty CSV", path.display())))?
        .split(',')
        .collect();
    let col = header
        .iter()
        .position(|h| *h == metric)
        .ok_or_else(|| usage(format!("unknown metric column {metric:?}")))?;
    let mean = rows
        .find(|l| l.starts_with("mean,"))
        .ok_or_else(|| Error::Format(format!("{}: no mean row", path.display())))?;
    mean.split(',')
        .nth(col)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Format(format!("{}: bad {metric} value", path.display())))
}

fn run_label(dir: &Path) -> String {
    dir.file_name()
        .map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    let run = &a.run_dir;
    let trace = parse_trace_csv(&read_text(&run.join("loss.csv"))?)?;
    write_text(&run.join("loss_curve.svg"), &loss_curve_svg(&trace, a.window)?)?;

    let eval = run.join("eval.csv");
    if eval.is_file() {
        let mut bars = Vec::new();
        let baseline = run.join("eval_bicubic.csv");
        if baseline.is_file() {
            bars.push(("bicubic".to_string(), mean_metric(&baseline, &a.metric)?));
        }
        bars.push((run_label(run), mean_metric(&eval, &a.metric)?));
        for d in &a.compare {
            bars.push((run_label(d), mean_metric(&d.join("eval.csv"), &a.metric)?));
        }
        write_text(&run.join("ablation.svg"), &bar_chart_svg("evaluation", &bars, &a.metric)?)?;
    } else if !a.compare.is_empty() {
        return Err(Error::InvalidArgument(format!("{} has no eval.csv", run.display())));
    }

    let samples = run.join("samples");
    if samples.join("lr.png").is_file() {
        let lr = read_png(samples.join("lr.png"))?;
        let sr = read_png(samples.join("sr.png"))?;
        let gt = read_png(samples.join("gt.png"))?;
        let r = sr.height() / lr.height().max(1);
        let up = upscale_nearest(&lr, r.max(1));
        // A top-left crop lies in the corner region the reference does not cover.
        let size = (sr.height().min(sr.width()) / 3).max(1);
        let m = crop_montage(&[&up, &sr, &gt], 0, 0, size, 2)?;
        write_png(&upscale_nearest(&m, 2), run.join("montage.png"))?;
    }
    info!("report written to {}", run.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Train(a) => cmd_train(a),
        Command::Infer(a) => cmd_infer(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Report(a) => cmd_report(a),
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error: kind=usage msg={}", one_line(first));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = if matches!(e, Error::Config(_)) { 2 } else { 1 };
            eprintln!("error: kind={} msg={}", e.kind(), one_line(&e.to_string()));
            ExitCode::from(code)
        }
    }
}
