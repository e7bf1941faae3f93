use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gsculpt_core::bench::{generate_scene, miou_macc, run_benchmark, BenchGrid, SceneSpec};
use gsculpt_core::perception::{FeatureExtractorHandle, SegmenterHandle};
use gsculpt_core::pipeline::{segment, SegmentConfig, SegmentError};
use gsculpt_core::render::{render, render_selection_mask, RenderOptions};
use gsculpt_core::scene::{
    load_cameras, load_clicks, load_mask_png, load_scene_ply, load_selection, save_cameras, save_clicks,
    save_mask_png, save_scene_ply, save_selection, subsample_views, Selection, ViewSet,
};
use gsculpt_core::toolbox::{apply_op, OpDescriptor};
use gsculpt_core::voting::VotePowerMode;
use serde::de::DeserializeOwned;
use serde_json::{json, Value};

/// Segment and edit 3D Gaussian scenes from 2D clicks.
#[derive(Parser)]
#[command(name = "gsculpt", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract a Gaussian selection from clicks on one or more views.
    Segment(SegmentArgs),
    /// Score predicted masks against ground-truth masks; prints mIoU and mAcc.
    Eval {
        /// Directory of predicted mask PNGs.
        #[arg(long)]
        pred: PathBuf,
        /// Directory of ground-truth mask PNGs with the same file names.
        #[arg(long)]
        gt: PathBuf,
    },
    /// Apply one toolbox operation to a selection.
    Manip {
        #[arg(long)]
        scene: PathBuf,
        /// Selection file; optional only for `combine`.
        #[arg(long)]
        selection: Option<PathBuf>,
        /// JSON operation descriptor.
        #[arg(long)]
        op: PathBuf,
        /// Output scene PLY.
        #[arg(long)]
        out: PathBuf,
        /// Cameras, required by `edit`.
        #[arg(long)]
        cameras: Option<PathBuf>,
        /// Where to write the selection carried over to the new scene.
        #[arg(long)]
        selection_out: Option<PathBuf>,
    },
    /// Run the synthetic benchmark grid and write one CSV row per cell.
    Bench {
        /// JSON array of scene specs.
        #[arg(long)]
        specs: PathBuf,
        /// JSON benchmark grid; the single default cell when absent.
        #[arg(long)]
        grid: Option<PathBuf>,
        #[arg(long)]
        csv: PathBuf,
    },
    /// Render one view to PNG.
    Render {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        cameras: PathBuf,
        #[arg(long)]
        view: u32,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_parser = parse_rgb, default_value = "0,0,0")]
        background: [f64; 3],
    },
    /// Generate a labeled synthetic scene with cameras, a target click and ground-truth masks.
    Gen {
        /// JSON scene spec; defaults apply to missing fields.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Overrides the spec seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Toggle {
    On,
    Off,
}

impl Toggle {
    fn on(self) -> bool {
        matches!(self, Toggle::On)
    }
}

#[derive(Args)]
struct SegmentArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    cameras: PathBuf,
    #[arg(long)]
    clicks: PathBuf,
    /// Output directory for selection.json, clicks.json, report.json and masks/.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    threshold: f64,
    #[arg(long, default_value = "blend_weight")]
    mode: VotePowerMode,
    #[arg(long, value_enum, default_value = "on")]
    iim: Toggle,
    #[arg(long, value_enum, default_value = "on")]
    epipolar: Toggle,
    #[arg(long, default_value_t = 1.0)]
    sample_rate: f64,
    #[arg(long)]
    shuffle: bool,
    /// Seed for view shuffling.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// `oracle` or `remote:<url>`.
    #[arg(long, default_value = "oracle")]
    segmenter: SegmenterHandle,
    /// `oracle`, `oracle:<patch>` or `remote:<url>`.
    #[arg(long, default_value = "oracle")]
    features: FeatureExtractorHandle,
}

fn parse_rgb(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    <[f64; 3]>::try_from(parts).map_err(|_| "expected r,g,b".to_string())
}

/// A failure reported as `{"error": {kind, message, detail?}}` on stderr.
struct Failure {
    code: u8,
    kind: &'static str,
    message: String,
    detail: Option<Value>,
}

impl Failure {
    fn pipeline(kind: &'static str, err: impl std::fmt::Display) -> Self {
        Self {
            code: 1,
            kind,
            message: err.to_string(),
            detail: None,
        }
    }

    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            kind: "usage",
            message: message.into(),
            detail: None,
        }
    }

    fn report(&self) {
        let mut err = json!({ "kind": self.kind, "message": self.message });
        if let Some(d) = &self.detail {
            err["detail"] = d.clone();
        }
        eprintln!("{}", json!({ "error": err }));
    }
}

macro_rules! fail {
    ($kind:literal) => {
        |e| Failure::pipeline($kind, e)
    };
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let bytes = fs::read(path).map_err(|e| Failure::pipeline("io", format!("{}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| Failure::pipeline("json", format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    fs::write(path, bytes).map_err(|e| Failure::pipeline("io", format!("{}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Result<(), Failure> {
    fs::create_dir_all(path).map_err(|e| Failure::pipeline("io", format!("{}: {e}", path.display())))
}

fn mask_name(view_id: u32) -> String {
    format!("view_{view_id:03}.png")
}

fn run_segment(a: SegmentArgs) -> Result<(), Failure> {
    let scene = load_scene_ply(&a.scene).map_err(fail!("scene"))?;
    let all_views = load_cameras(&a.cameras).map_err(fail!("scene"))?;
    let clicks = load_clicks(&a.clicks).map_err(fail!("scene"))?;
    let views = subsample_views(&all_views, a.sample_rate, a.shuffle, a.seed).map_err(|e| Failure::usage(e.to_string()))?;
    let config = SegmentConfig {
        threshold: a.threshold,
        mode: a.mode,
        iim: a.iim.on(),
        epipolar: a.epipolar.on(),
        ..SegmentConfig::default()
    };
    let shared = std::sync::Arc::new(scene);
    let segmenter = a.segmenter.build(&shared).map_err(fail!("perception"))?;
    let features = a.features.build().map_err(fail!("perception"))?;
    let outcome = segment(&shared, &views, &clicks, &segmenter, &features, &config).map_err(|e| {
        let mut f = Failure::pipeline("segment", &e);
        if let SegmentError::EmptySelection { report } = &e {
            f.detail = serde_json::to_value(report).ok();
        }
        f
    })?;

    create_dir(&a.out.join("masks"))?;
    save_selection(&outcome.selection, a.out.join("selection.json")).map_err(fail!("io"))?;
    save_clicks(&outcome.clicks, a.out.join("clicks.json")).map_err(fail!("io"))?;
    for cam in all_views.iter() {
        let mask = render_selection_mask(&shared, &outcome.selection, cam, config.mask_threshold).map_err(fail!("render"))?;
        save_mask_png(&mask, a.out.join("masks").join(mask_name(cam.id))).map_err(fail!("io"))?;
    }
    let report = json!({
        "selected": outcome.selection.len(),
        "gaussians": shared.len(),
        "scene_hash": shared.content_hash(),
        "views_used": views.ids(),
        "settings": {
            "sample_rate": a.sample_rate,
            "shuffle": a.shuffle,
            "seed": a.seed,
            "segmenter": a.segmenter,
            "features": a.features,
        },
        "report": outcome.report,
    });
    write_file(&a.out.join("report.json"), serde_json::to_string_pretty(&report).unwrap_or_default().as_bytes())?;
    println!("{}", json!({ "selected": outcome.selection.len(), "out": a.out }));
    Ok(())
}

fn mask_files(dir: &Path) -> Result<Vec<String>, Failure> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .map_err(|e| Failure::pipeline("io", format!("{}: {e}", dir.display())))?
        .filter_map(Result::ok)
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.to_ascii_lowercase().ends_with(".png"))
        .collect();
    names.sort();
    Ok(names)
}

fn run_eval(pred: &Path, gt: &Path) -> Result<(), Failure> {
    let names = mask_files(gt)?;
    if names.is_empty() {
        return Err(Failure::pipeline("eval", format!("no PNG masks in {}", gt.display())));
    }
    let (mut p, mut g) = (Vec::new(), Vec::new());
    for (i, name) in names.iter().enumerate() {
        let id = i as u32;
        g.push(load_mask_png(id, gt.join(name)).map_err(fail!("eval"))?);
        p.push(load_mask_png(id, pred.join(name)).map_err(fail!("eval"))?);
    }
    let (miou, macc) = miou_macc(&p, &g).map_err(fail!("eval"))?;
    println!("{miou:?} {macc:?}");
    Ok(())
}

fn run_manip(
    scene: &Path,
    selection: Option<&Path>,
    op: &Path,
    out: &Path,
    cameras: Option<&Path>,
    selection_out: Option<&Path>,
) -> Result<(), Failure> {
    let op: OpDescriptor = read_json(op)?;
    let views = match (cameras, &op) {
        (Some(path), _) => load_cameras(path).map_err(fail!("scene"))?,
        (None, OpDescriptor::Edit { .. }) => return Err(Failure::usage("`edit` needs --cameras")),
        (None, _) => ViewSet::new(Vec::new()).map_err(fail!("scene"))?,
    };
    if selection.is_none() && op.needs_selection() {
        return Err(Failure::usage(format!("`{}` needs --selection", op.name())));
    }
    let scene = load_scene_ply(scene).map_err(fail!("scene"))?;
    let selection = selection.map(load_selection).transpose().map_err(fail!("scene"))?;
    let outcome = apply_op(&scene, selection.as_ref(), &views, &op, &mut |step, loss| {
        eprintln!("{}", json!({ "step": step, "loss": loss }));
    })
    .map_err(fail!("toolbox"))?;
    save_scene_ply(&outcome.scene, out).map_err(fail!("io"))?;
    // PLY stores f32, so the selection is bound to the scene as it reads back from disk
    let written = load_scene_ply(out).map_err(fail!("io"))?;
    let carried = outcome
        .selection
        .map(|sel| Selection::new(&written, sel.indices().iter().copied()))
        .transpose()
        .map_err(fail!("scene"))?;
    if let (Some(path), Some(sel)) = (selection_out, &carried) {
        save_selection(sel, path).map_err(fail!("io"))?;
    }
    println!(
        "{}",
        json!({
            "op": op.name(),
            "gaussians": written.len(),
            "scene_hash": written.content_hash(),
            "selection": carried.as_ref().map(Selection::len),
        })
    );
    Ok(())
}

fn run_bench(specs: &Path, grid: Option<&Path>, csv: &Path) -> Result<(), Failure> {
    let specs: Vec<SceneSpec> = read_json(specs)?;
    let grid: BenchGrid = match grid {
        Some(path) => read_json(path)?,
        None => BenchGrid::default(),
    };
    let result = run_benchmark(&specs, &grid).map_err(fail!("bench"))?;
    let file = fs::File::create(csv).map_err(|e| Failure::pipeline("io", format!("{}: {e}", csv.display())))?;
    result.write_csv(file).map_err(fail!("io"))?;
    let (miou, macc) = result.mean();
    let failed = result.rows.iter().filter(|r| r.miou.is_nan()).count();
    println!("{}", json!({ "rows": result.rows.len(), "failed": failed, "miou": miou, "macc": macc }));
    Ok(())
}

fn run_render(scene: &Path, cameras: &Path, view: u32, out: &Path, background: [f64; 3]) -> Result<(), Failure> {
    let scene = load_scene_ply(scene).map_err(fail!("scene"))?;
    let views = load_cameras(cameras).map_err(fail!("scene"))?;
    let cam = views.get(view).ok_or_else(|| Failure::usage(format!("no view {view} in {}", cameras.display())))?;
    write_file(out, &render(&scene, cam, &RenderOptions::with_background(background)).color.to_png_bytes())
}

fn run_gen(spec: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<(), Failure> {
    let mut spec: SceneSpec = match spec {
        Some(path) => read_json(path)?,
        None => SceneSpec::default(),
    };
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    let synth = generate_scene(&spec).map_err(fail!("gen"))?;
    create_dir(&out.join("gt"))?;
    save_scene_ply(&synth.scene, out.join("scene.ply")).map_err(fail!("io"))?;
    save_cameras(&synth.views, out.join("cameras.json")).map_err(fail!("io"))?;
    save_clicks(std::slice::from_ref(&synth.click), out.join("clicks.json")).map_err(fail!("io"))?;
    for (i, cam) in synth.views.iter().enumerate() {
        save_mask_png(&synth.gt_mask(i), out.join("gt").join(mask_name(cam.id))).map_err(fail!("io"))?;
    }
    let meta = json!({ "spec": spec, "target_label": synth.target_label, "gaussians": synth.scene.len() });
    write_file(&out.join("spec.json"), serde_json::to_string_pretty(&meta).unwrap_or_default().as_bytes())?;
    println!("{meta}");
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Segment(args) => run_segment(args),
        Command::Eval { pred, gt } => run_eval(&pred, &gt),
        Command::Manip {
            scene,
            selection,
            op,
            out,
            cameras,
            selection_out,
        } => run_manip(&scene, selection.as_deref(), &op, &out, cameras.as_deref(), selection_out.as_deref()),
        Command::Bench { specs, grid, csv } => run_bench(&specs, grid.as_deref(), &csv),
        Command::Render {
            scene,
            cameras,
            view,
            out,
            background,
        } => run_render(&scene, &cameras, view, &out, background),
        Command::Gen { spec, seed, out } => run_gen(spec.as_deref(), seed, &out),
    }
}

/// Caps rayon's pool at `GSCULPT_WORKERS` threads when set.
fn configure_workers() {
    if let Some(n) = std::env::var("GSCULPT_WORKERS").ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // help and version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            Failure::usage(e.kind().to_string()).report();
            return ExitCode::from(2);
        }
    };
    configure_workers();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            f.report();
            ExitCode::from(f.code)
        }
    }
}
