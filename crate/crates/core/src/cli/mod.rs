//! Command-line front end: config resolution, subcommands and exit codes.

mod config;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub use config::{apply_set, default_victims, EvalConfig, NamedTexture, RunConfig};

use crate::attack::{pipeline_gradcheck, run_combined, run_sta, AttackConfig, AttackResult};
use crate::error::Error;
use crate::eval::{evaluate, run_video, transfer_matrix, EvalReport};
use crate::renderer::{render_sequence, save_png, PlanarObject, Scene, TextureMap};
use crate::siamese::{calibrate_tracker, finetune, load_victim, save_victim, Victim};
use crate::tracker::{write_track_csv, TrackPoint};

/// Failure classes, mapped to process exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, unreadable or invalid configuration, missing inputs.
    #[error("{0}")]
    Usage(String),
    /// A numeric check or acceptance gate failed.
    #[error("{0}")]
    Failed(String),
    #[error(transparent)]
    Lib(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failed(_) => 1,
            CliError::Lib(e) => match e {
                Error::InvalidArgument(_)
                | Error::Io(_)
                | Error::Json(_)
                | Error::Image(_)
                | Error::Csv(_)
                | Error::Checkpoint(_) => 2,
                _ => 1,
            },
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "sta",
    version,
    about = "Adversarial texture attacks on Siamese trackers"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Global seed; overrides the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Dotted config override, e.g. `attack.lambda=0.01`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the scene JSON, ground-truth boxes and preview frames.
    Scene(Common),
    /// Build (and optionally fine-tune) victims, save weights and check they track.
    Calibrate(Common),
    /// Optimize an adversarial texture.
    Attack(Common),
    /// Track the scene textured with the configured texture.
    Track(Common),
    /// Track and score the configured texture against a clean baseline.
    Eval(Common),
    /// Cross-victim transfer matrix.
    Transfer(Common),
    /// Finite-difference check of the full attack pipeline.
    Gradcheck(Common),
}

/// Parse arguments, run, and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

type Handler = fn(&Context) -> Result<(), CliError>;

pub fn run(command: Command) -> Result<(), CliError> {
    let (common, f): (&Common, Handler) = match &command {
        Command::Scene(c) => (c, cmd_scene),
        Command::Calibrate(c) => (c, cmd_calibrate),
        Command::Attack(c) => (c, cmd_attack),
        Command::Track(c) => (c, cmd_track),
        Command::Eval(c) => (c, cmd_eval),
        Command::Transfer(c) => (c, cmd_transfer),
        Command::Gradcheck(c) => (c, cmd_gradcheck),
    };
    let mut cfg = RunConfig::resolve(common.config.as_deref(), &common.sets)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.out = o.clone();
    }
    let ctx = Context::new(cfg)?;
    f(&ctx)
}

/// Resolved inputs shared by every command.
pub struct Context {
    pub cfg: RunConfig,
    pub scene: Scene,
    pub object: PlanarObject,
    pub texture: TextureMap,
    pub attack: AttackConfig,
}

impl Context {
    pub fn new(cfg: RunConfig) -> Result<Context, CliError> {
        let mut scene = match &cfg.scene {
            Some(p) => Scene::load(p)
                .map_err(|e| CliError::Usage(format!("scene {}: {e}", p.display())))?,
            None => Scene::bridge(),
        };
        if cfg.no_occluders {
            scene.occluders.clear();
        }
        let object = PlanarObject::rectangle(cfg.object[0], cfg.object[1])?;
        let texture = match &cfg.texture {
            Some(p) => load_texture(p)?,
            None => TextureMap::car(cfg.texture_size[0], cfg.texture_size[1])?,
        };
        if !(cfg.penalty.is_finite() && (0.0..=1.0).contains(&cfg.penalty)) {
            return Err(CliError::Usage(format!(
                "penalty must lie in [0, 1], got {}",
                cfg.penalty
            )));
        }
        let attack = AttackConfig {
            seed: cfg.seed,
            ..cfg.attack.clone()
        };
        attack
            .validate()
            .map_err(|e| CliError::Usage(format!("attack config: {e}")))?;
        fs::create_dir_all(&cfg.out)
            .map_err(|e| CliError::Usage(format!("cannot create {}: {e}", cfg.out.display())))?;
        Ok(Context {
            cfg,
            scene,
            object,
            texture,
            attack,
        })
    }

    fn out(&self, name: &str) -> PathBuf {
        self.cfg.out.join(name)
    }

    /// Build configured victims (fine-tuned when requested) and load checkpoints.
    pub fn victims(&self) -> Result<Vec<Victim>, CliError> {
        let mut out = Vec::new();
        for spec in &self.cfg.victims {
            let mut v = spec.build()?;
            if let Some(ft) = &self.cfg.finetune {
                let ft = crate::siamese::FinetuneConfig {
                    seed: self.cfg.seed,
                    ..ft.clone()
                };
                finetune(&mut v, &ft)?;
            }
            out.push(v);
        }
        for p in &self.cfg.checkpoints {
            out.push(load_victim(p)?);
        }
        let mut names: Vec<&str> = out.iter().map(|v| v.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(CliError::Usage("victim names must be unique".into()));
        }
        if out.is_empty() {
            return Err(CliError::Usage("no victims configured".into()));
        }
        Ok(out)
    }

    /// Victims selected by `targets`; `default_all` picks every victim when
    /// no target is named, otherwise only the first.
    fn selected<'a>(
        &self,
        all: &'a [Victim],
        default_all: bool,
    ) -> Result<Vec<&'a Victim>, CliError> {
        if self.cfg.targets.is_empty() {
            return Ok(if default_all {
                all.iter().collect()
            } else {
                vec![&all[0]]
            });
        }
        self.cfg
            .targets
            .iter()
            .map(|t| {
                all.iter()
                    .find(|v| &v.name == t)
                    .ok_or_else(|| CliError::Usage(format!("unknown target victim {t:?}")))
            })
            .collect()
    }
}

/// Load a texture from a PNG or a `.f64` sidecar.
pub fn load_texture(path: &Path) -> Result<TextureMap, CliError> {
    let r = if path.extension().is_some_and(|e| e == "f64") {
        TextureMap::load_sidecar(path)
    } else {
        TextureMap::load_png(path)
    };
    r.map_err(|e| CliError::Usage(format!("texture {}: {e}", path.display())))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    fs::write(path, text + "\n").map_err(Error::from)?;
    Ok(())
}

/// Write `<stem>.png` (quantized) and `<stem>.f64` (lossless).
fn write_texture(texture: &TextureMap, dir: &Path, stem: &str) -> Result<(), CliError> {
    texture.save_png(&dir.join(format!("{stem}.png")))?;
    texture.save_sidecar(&dir.join(format!("{stem}.f64")))?;
    Ok(())
}

fn cmd_scene(ctx: &Context) -> Result<(), CliError> {
    ctx.scene.save(&ctx.out("scene.json"))?;
    let (frames, boxes) = render_sequence(&ctx.scene, &ctx.object, &ctx.texture)?;
    write_json(&boxes, &ctx.out("boxes.json"))?;
    let dir = ctx.out("frames");
    fs::create_dir_all(&dir).map_err(Error::from)?;
    for (i, f) in frames.iter().enumerate() {
        save_png(f, &dir.join(format!("frame_{i:03}.png")))?;
    }
    println!(
        "scene: {} frames, {} occluders",
        frames.len(),
        ctx.scene.occluders.len()
    );
    Ok(())
}

fn cmd_calibrate(ctx: &Context) -> Result<(), CliError> {
    let victims = ctx.victims()?;
    let mut failed = Vec::new();
    let mut reports = Vec::new();
    for v in &victims {
        save_victim(v, &ctx.out(&format!("{}.bin", v.name)))?;
        let r = calibrate_tracker(v, &ctx.scene, &ctx.object, &ctx.texture, ctx.cfg.penalty)?;
        println!(
            "{}: mean IOU {:.4} ({})",
            v.name,
            r.mean_iou,
            if r.passed { "pass" } else { "FAIL" }
        );
        if !r.passed {
            failed.push(v.name.clone());
        }
        reports.push(r);
    }
    write_json(&reports, &ctx.out("calibration.json"))?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failed(format!(
            "calibration failed for {}",
            failed.join(", ")
        )))
    }
}

#[derive(Serialize)]
struct AttackSummary<'a> {
    victims: Vec<&'a str>,
    l2: f64,
    initial_loss: f64,
    final_loss: f64,
    config: &'a AttackConfig,
}

/// Run a single or combined attack against the selected victims.
pub fn attack_selected(ctx: &Context, victims: &[&Victim]) -> Result<AttackResult, CliError> {
    Ok(match victims {
        [v] => run_sta(v, &ctx.object, &ctx.texture, &ctx.attack)?,
        many => run_combined(many, &ctx.object, &ctx.texture, &ctx.attack)?,
    })
}

fn cmd_attack(ctx: &Context) -> Result<(), CliError> {
    let all = ctx.victims()?;
    let victims = ctx.selected(&all, false)?;
    let r = attack_selected(ctx, &victims)?;
    let dir = &ctx.cfg.out;
    write_texture(&r.texture, dir, "texture")?;
    r.write_loss_csv(&ctx.out("loss.csv"))?;
    ctx.attack.save(&ctx.out("attack.json"))?;
    let summary = AttackSummary {
        victims: victims.iter().map(|v| v.name.as_str()).collect(),
        l2: r.l2,
        initial_loss: r.loss_trace[0],
        final_loss: *r.loss_trace.last().expect("at least one iteration"),
        config: &ctx.attack,
    };
    write_json(&summary, &ctx.out("attack_report.json"))?;
    println!(
        "attack: loss {:.6} -> {:.6}, l2 {:.4}",
        summary.initial_loss, summary.final_loss, summary.l2
    );
    Ok(())
}

fn track_one(
    ctx: &Context,
    v: &Victim,
    texture: &TextureMap,
) -> Result<(Vec<TrackPoint>, EvalReport), CliError> {
    let (points, truth) = run_video(v, &ctx.scene, &ctx.object, texture, ctx.cfg.penalty)?;
    let report = evaluate(&points, &truth, None)?;
    Ok((points, report))
}

fn cmd_track(ctx: &Context) -> Result<(), CliError> {
    let all = ctx.victims()?;
    for v in ctx.selected(&all, true)? {
        let (points, report) = track_one(ctx, v, &ctx.texture)?;
        write_track_csv(&points, &ctx.out(&format!("track_{}.csv", v.name)))?;
        println!("{}: mean IOU {:.4}", v.name, report.mean_iou);
    }
    Ok(())
}

fn cmd_eval(ctx: &Context) -> Result<(), CliError> {
    let all = ctx.victims()?;
    let baseline = match &ctx.cfg.eval.baseline_texture {
        Some(p) => load_texture(p)?,
        None => TextureMap::car(ctx.cfg.texture_size[0], ctx.cfg.texture_size[1])?,
    };
    let tau = ctx.cfg.eval.drift_tau;
    for v in ctx.selected(&all, true)? {
        let (clean, _) = run_video(v, &ctx.scene, &ctx.object, &baseline, ctx.cfg.penalty)?;
        let (points, truth) = run_video(v, &ctx.scene, &ctx.object, &ctx.texture, ctx.cfg.penalty)?;
        let mut report = evaluate(&points, &truth, Some(&clean))?;
        report.drift_frame = crate::eval::detect_drift(&report.per_frame_iou, tau)?;
        report.write_json(&ctx.out(&format!("eval_{}.json", v.name)))?;
        report.write_curves_csv(&ctx.out(&format!("curves_{}.csv", v.name)))?;
        write_track_csv(&points, &ctx.out(&format!("track_{}.csv", v.name)))?;
        println!(
            "{}: mean IOU {:.4}, score drop {:.4}, drift {}",
            v.name,
            report.mean_iou,
            report.score_drop.unwrap_or(0.0),
            report
                .drift_frame
                .map_or("none".to_string(), |f| format!("at frame {f}"))
        );
    }
    Ok(())
}

fn cmd_transfer(ctx: &Context) -> Result<(), CliError> {
    let all = ctx.victims()?;
    let victims = ctx.selected(&all, true)?;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.cfg.seed);
    let noise =
        TextureMap::uniform_noise(ctx.texture.height(), ctx.texture.width(), &mut rng)?.quantized();
    let mut textures = vec![
        ("clean".to_string(), ctx.texture.clone()),
        ("noise".to_string(), noise),
    ];
    if ctx.cfg.transfer_textures.is_empty() {
        for v in &victims {
            let r = attack_selected(ctx, &[*v])?;
            write_texture(&r.texture, &ctx.cfg.out, &format!("adv_{}", v.name))?;
            textures.push((format!("adv_{}", v.name), r.texture.quantized()));
        }
        if victims.len() > 1 {
            let r = attack_selected(ctx, &victims)?;
            write_texture(&r.texture, &ctx.cfg.out, "adv_combined")?;
            textures.push(("adv_combined".to_string(), r.texture.quantized()));
        }
    } else {
        for t in &ctx.cfg.transfer_textures {
            textures.push((t.name.clone(), load_texture(&t.path)?));
        }
    }
    let m = transfer_matrix(
        &victims,
        &textures,
        &ctx.scene,
        &ctx.object,
        ctx.cfg.penalty,
    )?;
    m.write_csv(&ctx.out("transfer.csv"))?;
    m.write_json(&ctx.out("transfer.json"))?;
    println!("victim,{}", m.columns.join(","));
    for (name, row) in m.rows.iter().zip(&m.cells) {
        let cells: Vec<String> = row.iter().map(|c| format!("{c:.2}")).collect();
        println!("{name},{}", cells.join(","));
    }
    Ok(())
}

fn cmd_gradcheck(ctx: &Context) -> Result<(), CliError> {
    let all = ctx.victims()?;
    let mut reports = Vec::new();
    for v in ctx.selected(&all, true)? {
        let r = pipeline_gradcheck(
            v,
            &ctx.object,
            &ctx.texture,
            &ctx.attack,
            ctx.cfg.gradcheck_coords,
            ctx.cfg.gradcheck_tolerance,
        )?;
        println!(
            "{}: {} texels, worst relative error {:.3e} ({})",
            v.name,
            r.coordinates,
            r.worst_rel_err,
            if r.passed { "pass" } else { "FAIL" }
        );
        reports.push(r);
    }
    write_json(&reports, &ctx.out("gradcheck.json"))?;
    if reports.iter().all(|r| r.passed) {
        Ok(())
    } else {
        Err(CliError::Failed("gradient check exceeded tolerance".into()))
    }
}
