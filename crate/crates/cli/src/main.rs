mod overrides;
mod pose;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use sparsesplat::buffer::Rect;
use sparsesplat::eval::{config_hash, evaluate, sweep, RunMetadata, SweepAxis};
use sparsesplat::io::checkpoint::{read_cloud, write_cloud};
use sparsesplat::io::colmap::{load_colmap_scene, LoadOptions};
use sparsesplat::io::config::RunConfig;
use sparsesplat::io::femb::write_femb;
use sparsesplat::io::images::write_png;
use sparsesplat::io::pfm::write_pfm;
use sparsesplat::io::synth::{write_synth_scene, SynthSpec};
use sparsesplat::priors::{PriorView, ServiceClient, PriorSource};
use sparsesplat::rasterizer::{render, RenderSettings};
use sparsesplat::scene::Camera;
use sparsesplat::trainer::{TrainEvent, Trainer};

const ENDPOINT_ENV: &str = "SPARSESPLAT_PRIOR_ENDPOINT";

#[derive(Parser)]
#[command(name = "sparsesplat", version, about = "Sparse-view Gaussian splatting with depth and semantic regularizers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize a cloud for a scene directory.
    Train(TrainArgs),
    /// Render a checkpoint from a scene camera or a pose file.
    Render(RenderArgs),
    /// Score a checkpoint on held-out views.
    Eval(EvalArgs),
    /// Write a synthetic scene directory.
    Synth(SynthArgs),
    /// Query a prior service and store depth and feature files.
    PrecomputePriors(PrecomputeArgs),
    /// Train and evaluate once per value of a regularizer weight.
    Sweep(SweepArgs),
}

/// Run configuration: a TOML file plus `--key value` overrides for any key.
#[derive(Args)]
struct ConfigArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `scene_dir`.
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Overrides `out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Further `--<key> <value>` pairs, one per configuration key.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    rest: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut pairs = overrides::parse_pairs(&self.rest)?;
        if let Some(s) = &self.scene {
            pairs.push(("scene_dir".into(), s.display().to_string()));
        }
        if let Some(o) = &self.out {
            pairs.push(("out_dir".into(), o.display().to_string()));
        }
        let env = std::env::var(ENDPOINT_ENV).ok().filter(|v| !v.is_empty());
        let cfg = overrides::merge(self.config.as_deref(), env.as_deref(), &pairs)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Scene directory providing the camera.
    #[arg(long, requires = "view")]
    scene: Option<PathBuf>,
    /// View index within the scene.
    #[arg(long)]
    view: Option<usize>,
    /// Pose file: `fx fy cx cy width height qw qx qy qz tx ty tz`.
    #[arg(long, conflicts_with = "scene")]
    pose: Option<PathBuf>,
    /// Output PNG.
    #[arg(long)]
    out: PathBuf,
    /// Also write the composited depth as PFM.
    #[arg(long)]
    depth: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ViewSet {
    Test,
    Train,
    All,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    scene: PathBuf,
    /// Table output; key-value lines go next to it with a `.kv` extension.
    #[arg(long)]
    report: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    views: ViewSet,
    /// Training views for the default split when the scene has no split file.
    #[arg(long, default_value_t = 3)]
    train_views: usize,
    /// Configuration whose hash is recorded in the report.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    gaussians: usize,
    #[arg(long, default_value_t = 8)]
    views: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    train_views: usize,
}

#[derive(Args)]
struct PrecomputeArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long, env = ENDPOINT_ENV)]
    endpoint: String,
    #[arg(long)]
    out: PathBuf,
    /// Side length of feature crops.
    #[arg(long, default_value_t = 32)]
    crop_size: usize,
    /// Crops per axis; their corners are evenly spread over the image.
    #[arg(long, default_value_t = 2)]
    crops_per_axis: usize,
    #[arg(long, default_value_t = 30_000)]
    timeout_ms: u64,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    axis: SweepAxisArg,
    /// Comma-separated weights.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepAxisArg {
    OmegaSem,
    OmegaDepth,
}

impl From<SweepAxisArg> for SweepAxis {
    fn from(a: SweepAxisArg) -> Self {
        match a {
            SweepAxisArg::OmegaSem => SweepAxis::OmegaSem,
            SweepAxisArg::OmegaDepth => SweepAxis::OmegaDepth,
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => train(a),
        Command::Render(a) => render_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Synth(a) => synth(a),
        Command::PrecomputePriors(a) => precompute(a),
        Command::Sweep(a) => sweep_cmd(a),
    }
}

fn required<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    p.as_deref().with_context(|| format!("`{key}` is not set (config key or flag)"))
}

fn train(args: TrainArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    let scene_dir = required(&cfg.scene_dir, "scene_dir")?;
    let out_dir = required(&cfg.out_dir, "out_dir")?;
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let text = cfg.to_toml();
    std::fs::write(out_dir.join("config.toml"), &text)?;

    let (scene, initial) = load_colmap_scene(scene_dir, &cfg.load_options())?;
    let priors = cfg.prior_source()?;
    log::info!(
        "{} views ({} train, {} test), {} initial Gaussians, {} priors",
        scene.view_count(),
        scene.train.len(),
        scene.test.len(),
        initial.len(),
        priors.name()
    );
    let trainer = Trainer::new(&scene, &priors, cfg.loss_weights(), cfg.train_config())?;
    let mut trace = BufWriter::new(File::create(out_dir.join("trace.jsonl"))?);
    let result = trainer.run(initial, |event| {
        match event {
            TrainEvent::Trace(record) => {
                let line = serde_json::to_string(record).expect("trace record serializes");
                writeln!(trace, "{line}").map_err(sparsesplat::Error::from)?;
            }
            TrainEvent::Checkpoint { iteration, cloud } => {
                write_cloud(&out_dir.join(format!("checkpoint_{iteration:06}.sidg")), cloud)?;
            }
        }
        Ok(())
    })?;
    trace.flush()?;
    let final_path = out_dir.join("cloud.sidg");
    write_cloud(&final_path, &result.cloud)?;
    log::info!("wrote {}", final_path.display());

    if !scene.test.is_empty() {
        let report = evaluate(
            &result.cloud,
            &scene,
            &scene.test,
            &RenderSettings::default(),
            RunMetadata {
                config_hash: config_hash(&text),
                seed: cfg.seed,
                iteration: cfg.iterations,
            },
        )?;
        report.write(&out_dir.join("eval.txt"))?;
        print!("{}", report.to_table());
    }
    Ok(())
}

fn render_cmd(args: RenderArgs) -> Result<()> {
    let cloud = read_cloud(&args.checkpoint)?;
    let camera: Camera = match (&args.scene, args.view, &args.pose) {
        (Some(dir), Some(view), None) => {
            let (scene, _) = load_colmap_scene(dir, &LoadOptions::default())?;
            scene
                .cameras
                .get(view)
                .cloned()
                .with_context(|| format!("view {view} out of range ({} views)", scene.view_count()))?
        }
        (None, _, Some(pose)) => pose::read_pose(pose)?,
        _ => bail!("give either --scene with --view, or --pose"),
    };
    let out = render(&cloud, &camera, &RenderSettings::default())?;
    write_png(&args.out, &out.color)?;
    if let Some(path) = &args.depth {
        write_pfm(path, &sparsesplat::priors::DepthMap::new(out.depth))?;
    }
    Ok(())
}

fn eval_cmd(args: EvalArgs) -> Result<()> {
    let cloud = read_cloud(&args.checkpoint)?;
    let options = LoadOptions {
        train_views: args.train_views,
        ..Default::default()
    };
    let (scene, _) = load_colmap_scene(&args.scene, &options)?;
    let views = match args.views {
        ViewSet::Test => scene.test.clone(),
        ViewSet::Train => scene.train.clone(),
        ViewSet::All => (0..scene.view_count()).collect(),
    };
    let (hash, seed) = match &args.config {
        Some(p) => {
            let cfg = RunConfig::load(p)?;
            (config_hash(&cfg.to_toml()), cfg.seed)
        }
        None => (String::new(), 0),
    };
    let report = evaluate(
        &cloud,
        &scene,
        &views,
        &RenderSettings::default(),
        RunMetadata {
            config_hash: hash,
            seed,
            iteration: 0,
        },
    )?;
    report.write(&args.report)?;
    print!("{}", report.to_table());
    Ok(())
}

fn synth(args: SynthArgs) -> Result<()> {
    let spec = SynthSpec {
        gaussians: args.gaussians,
        views: args.views,
        width: args.width,
        height: args.height,
        seed: args.seed,
        train_views: Some(args.train_views),
        ..Default::default()
    };
    let s = write_synth_scene(&args.out, &spec)?;
    log::info!(
        "wrote {} views ({} train) and {} points to {}",
        s.scene.view_count(),
        s.scene.train.len(),
        s.points.len(),
        args.out.display()
    );
    Ok(())
}

fn precompute(args: PrecomputeArgs) -> Result<()> {
    let (scene, _) = load_colmap_scene(&args.scene, &LoadOptions::default())?;
    let source = PriorSource::Service(ServiceClient::new(
        args.endpoint.clone(),
        Duration::from_millis(args.timeout_ms),
    ));
    std::fs::create_dir_all(&args.out)?;
    let mut manifest = String::from("# stem crop_id x y size\n");
    let k = args.crops_per_axis.max(1);
    for v in 0..scene.view_count() {
        let stem = scene.stem(v);
        let camera = &scene.cameras[v];
        let depth = source.get_depth(&PriorView { camera, stem: Some(stem) }, Some(&scene.images[v]))?;
        write_pfm(&args.out.join(format!("{stem}.pfm")), &depth)?;
        let image = &scene.images[v];
        let size = args.crop_size.min(image.width).min(image.height);
        for j in 0..k {
            for i in 0..k {
                let norm = |n: usize| if k == 1 { 0.5 } else { n as f64 / (k - 1) as f64 };
                let rect: Rect = Rect::at_normalized(image.width, image.height, size, norm(i), norm(j));
                let crop_id = format!("{}_{}_{}", rect.x, rect.y, size);
                let emb = source.get_features(&image.crop(rect), None)?;
                write_femb(&args.out.join(format!("{stem}.{crop_id}.femb")), &emb)?;
                manifest.push_str(&format!("{stem} {crop_id} {} {} {size}\n", rect.x, rect.y));
            }
        }
        log::info!("priors for {}", scene.names[v]);
    }
    std::fs::write(args.out.join("manifest.txt"), manifest)?;
    Ok(())
}

fn sweep_cmd(args: SweepArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    let scene_dir = required(&cfg.scene_dir, "scene_dir")?;
    let out_dir = required(&cfg.out_dir, "out_dir")?;
    std::fs::create_dir_all(out_dir)?;
    let (scene, initial) = load_colmap_scene(scene_dir, &cfg.load_options())?;
    let priors = cfg.prior_source()?;
    let table = sweep(
        &scene,
        &priors,
        &cfg.loss_weights(),
        &cfg.train_config(),
        &initial,
        args.axis.into(),
        &args.values,
    )?;
    std::fs::write(out_dir.join("sweep.txt"), table.to_table())?;
    std::fs::write(out_dir.join("sweep.dat"), table.to_dat())?;
    print!("{}", table.to_table());
    Ok(())
}
