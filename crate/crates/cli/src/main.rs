use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use rbox_layout::fitter::{fit_scene_with_cache, total_layout_loss, FitConfig, SceneAnnotation, SceneCache};
use rbox_layout::geometry::RBox;
use rbox_layout::io::config::apply_config;
use rbox_layout::io::dota::{format_dota, parse_dota, DotaRecord};
use rbox_layout::io::eval::{evaluate, format_report, LabeledBox};
use rbox_layout::io::imageio::{load_gray, save_gray, save_label_png, write_label_map, write_pgm8};
use rbox_layout::io::points::{format_points, parse_points, scene_from_points, ClassTable, PointRecord};
use rbox_layout::io::svg::{render_svg, Overlay};
use rbox_layout::io::{loss_fields, trace_line};
use rbox_layout::synth::{class_token, synth_scene, Layout, SynthConfig};
use rbox_layout::tessellation::voronoi_partition;
use rbox_layout::watershed::{make_surface, watershed, BarrierMode, SurfaceMode, WatershedOptions};

#[derive(Parser)]
#[command(name = "rbox-layout", version, about = "Oriented boxes from point annotations via layout constraints")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic scenes with ground truth.
    Synth(SynthArgs),
    /// Write the Voronoi ridge mask of a point set.
    Voronoi(VoronoiArgs),
    /// Write the watershed basin label map.
    Watershed(WatershedArgs),
    /// Fit oriented boxes to point annotations.
    Fit(FitArgs),
    /// Print per-term loss values for given boxes.
    Loss(LossArgs),
    /// Compare predicted boxes with ground truth.
    Eval(EvalArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of scenes; scene i uses seed + i.
    #[arg(long, default_value_t = 1)]
    scenes: usize,
    #[arg(long, default_value = "grid", value_parser = ["grid", "random-packed", "random"])]
    layout: String,
    #[arg(long, default_value_t = 512)]
    width: usize,
    #[arg(long, default_value_t = 512)]
    height: usize,
    #[arg(long, default_value_t = 20)]
    min_count: usize,
    #[arg(long, default_value_t = 60)]
    max_count: usize,
    #[arg(long, default_value_t = 24.0)]
    min_size: f64,
    #[arg(long, default_value_t = 64.0)]
    max_size: f64,
    #[arg(long, default_value_t = 1.0)]
    min_aspect: f64,
    #[arg(long, default_value_t = 3.0)]
    max_aspect: f64,
    #[arg(long, default_value_t = 0.0)]
    max_iou: f64,
    #[arg(long, default_value_t = 2.0)]
    min_gap: f64,
    /// Object/background contrast in 8-bit levels.
    #[arg(long, default_value_t = 60.0)]
    contrast: f64,
    /// Pixel noise standard deviation in 8-bit levels.
    #[arg(long, default_value_t = 8.0)]
    noise: f64,
    /// Point jitter as a fraction of the short side.
    #[arg(long, default_value_t = 0.0)]
    jitter: f64,
    #[arg(long, default_value_t = 1)]
    classes: u16,
    /// Image format: png or pgm.
    #[arg(long, default_value = "png", value_parser = ["png", "pgm"])]
    format: String,
}

#[derive(Args)]
struct VoronoiArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    points: PathBuf,
    /// Ridge mask (8-bit PGM, 255 on ridges).
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    out_svg: Option<PathBuf>,
}

#[derive(Args)]
struct WatershedArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    points: PathBuf,
    /// Label map (16-bit PGM).
    #[arg(long)]
    out: PathBuf,
    /// Color rendering of the label map (PNG).
    #[arg(long)]
    out_png: Option<PathBuf>,
    #[arg(long, default_value = "background", value_parser = ["background", "wall"])]
    barrier_mode: String,
    #[arg(long, default_value = "gradient", value_parser = ["gradient", "intensity"])]
    surface: String,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long, required_unless_present = "scene_dir")]
    image: Option<PathBuf>,
    #[arg(long, required_unless_present = "scene_dir")]
    points: Option<PathBuf>,
    /// Fit every `scene_*.points.txt` in this directory, writing
    /// `scene_*.fit.txt` (and `.fit.svg`) next to it.
    #[arg(long, conflicts_with_all = ["image", "points", "out_dota", "out_svg", "edge_map", "trace", "gt"])]
    scene_dir: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_dota: Option<PathBuf>,
    #[arg(long)]
    out_svg: Option<PathBuf>,
    /// Grayscale edge map replacing the built-in Sobel map.
    #[arg(long)]
    edge_map: Option<PathBuf>,
    #[arg(long)]
    with_ss: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Per-iteration loss trace.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Ground truth drawn in the SVG overlay.
    #[arg(long)]
    gt: Option<PathBuf>,
}

#[derive(Args)]
struct LossArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    points: PathBuf,
    /// Boxes in DOTA format, one per point, in point order.
    #[arg(long)]
    boxes: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Grayscale edge map replacing the built-in Sobel map.
    #[arg(long)]
    edge_map: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Also write the report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn load_scene(image: &Path, points: &Path) -> Result<(SceneAnnotation, ClassTable, Vec<PointRecord>)> {
    let img = load_gray(image).with_context(|| format!("reading {}", image.display()))?;
    let records = parse_points(&read(points)?).with_context(|| format!("parsing {}", points.display()))?;
    let (scene, classes) = scene_from_points(img, &records).with_context(|| format!("loading {}", points.display()))?;
    Ok((scene, classes, records))
}

fn load_config(path: Option<&Path>) -> Result<FitConfig> {
    match path {
        Some(p) => apply_config(&read(p)?, FitConfig::default()).with_context(|| format!("parsing {}", p.display())),
        None => Ok(FitConfig::default()),
    }
}

fn load_dota(path: &Path) -> Result<Vec<DotaRecord>> {
    let f = parse_dota(&read(path)?).with_context(|| format!("parsing {}", path.display()))?;
    for (line, reason) in &f.skipped {
        eprintln!("warning: {}:{line}: skipped ({reason})", path.display());
    }
    Ok(f.records)
}

fn run_synth(a: &SynthArgs) -> Result<()> {
    let layout = Layout::parse(&a.layout).with_context(|| format!("unknown layout {:?}", a.layout))?;
    let ext = match a.format.as_str() {
        "png" | "pgm" => a.format.as_str(),
        other => bail!("unknown image format {other:?}"),
    };
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    (0..a.scenes).into_par_iter().try_for_each(|i| -> Result<()> {
        let cfg = SynthConfig {
            width: a.width,
            height: a.height,
            count: (a.min_count, a.max_count),
            size: (a.min_size, a.max_size),
            aspect: (a.min_aspect, a.max_aspect),
            layout,
            max_iou: a.max_iou,
            min_gap: a.min_gap,
            contrast: a.contrast / 255.0,
            noise: a.noise / 255.0,
            point_jitter: a.jitter,
            classes: a.classes,
            seed: a.seed + i as u64,
        };
        let s = synth_scene(&cfg).with_context(|| format!("scene {i}"))?;
        let stem = a.out.join(format!("scene_{i:03}"));
        save_gray(&stem.with_extension(ext), &s.image)?;
        let gt: Vec<DotaRecord> = s
            .gt_boxes
            .iter()
            .zip(&s.annotation.instances)
            .map(|(b, inst)| DotaRecord::new(*b, class_token(inst.class_id), 0))
            .collect();
        write(&stem.with_extension("gt.txt"), format_dota(&gt))?;
        let pts: Vec<PointRecord> = s
            .annotation
            .instances
            .iter()
            .map(|inst| PointRecord { x: inst.point.x, y: inst.point.y, category: class_token(inst.class_id) })
            .collect();
        write(&stem.with_extension("points.txt"), format_points(&pts))
    })
}

fn run_voronoi(a: &VoronoiArgs) -> Result<()> {
    let (scene, _, _) = load_scene(&a.image, &a.points)?;
    let (w, h) = (scene.image.width(), scene.image.height());
    let v = voronoi_partition(&scene.points(), w, h)?;
    let mask: Vec<u8> = v.ridges.data().iter().map(|&r| if r { 255 } else { 0 }).collect();
    write_pgm8(&a.out, w, h, &mask)?;
    if let Some(svg) = &a.out_svg {
        let mut s = render_svg(&Overlay { width: w, height: h, points: &scene.points(), ..Overlay::default() });
        s.truncate(s.len() - "</svg>\n".len());
        let mut ridges = String::from("  <path fill=\"#4080ff\" d=\"");
        for y in 0..h {
            for x in 0..w {
                if *v.ridges.get(x, y) {
                    let _ = write!(ridges, "M{:.1} {:.1}h1v1h-1z", x as f64 - 0.5, y as f64 - 0.5);
                }
            }
        }
        ridges.push_str("\"/>\n</svg>\n");
        s.push_str(&ridges);
        write(svg, s)?;
    }
    Ok(())
}

fn run_watershed(a: &WatershedArgs) -> Result<()> {
    let mode = BarrierMode::parse(&a.barrier_mode).with_context(|| format!("unknown barrier mode {:?}", a.barrier_mode))?;
    let surface_mode = SurfaceMode::parse(&a.surface).with_context(|| format!("unknown surface {:?}", a.surface))?;
    let (scene, _, _) = load_scene(&a.image, &a.points)?;
    let pts = scene.points();
    let v = voronoi_partition(&pts, scene.image.width(), scene.image.height())?;
    let opts = WatershedOptions { barrier_mode: mode, ..WatershedOptions::default() };
    let r = watershed(&make_surface(&scene.image, surface_mode), &pts, &v.ridges, opts)?;
    for m in &r.moved {
        eprintln!("warning: instance {} marker moved from {:?} to {:?}", m.instance, m.from, m.to);
    }
    write_label_map(&a.out, &r.labels)?;
    if let Some(p) = &a.out_png {
        save_label_png(p, &r.labels)?;
    }
    Ok(())
}

struct FitJob<'a> {
    image: &'a Path,
    points: &'a Path,
    edge_map: Option<&'a Path>,
    gt: Option<&'a Path>,
    out_dota: Option<&'a Path>,
    out_svg: Option<&'a Path>,
    trace: Option<&'a Path>,
}

fn build_cache(scene: &SceneAnnotation, cfg: &FitConfig, edge_map: Option<&Path>) -> Result<SceneCache> {
    Ok(match edge_map {
        Some(p) => {
            let map = load_gray(p).with_context(|| format!("reading {}", p.display()))?;
            SceneCache::build_with_edge_map(scene, cfg, map)?
        }
        None => SceneCache::build(scene, cfg)?,
    })
}

fn fit_one(job: &FitJob<'_>, cfg: &FitConfig) -> Result<()> {
    let (scene, classes, _) = load_scene(job.image, job.points)?;
    let cache = build_cache(&scene, cfg, job.edge_map)?;
    let fit = fit_scene_with_cache(&scene, &cache, cfg)?;
    for w in &fit.warnings {
        eprintln!("warning: {}: {w}", job.points.display());
    }
    let records: Vec<DotaRecord> = fit
        .boxes
        .iter()
        .zip(&scene.instances)
        .map(|(b, inst)| DotaRecord::new(*b, classes.token(inst.class_id), 0))
        .collect();
    let text = format_dota(&records);
    match job.out_dota {
        Some(p) => write(p, &text)?,
        None => print!("{text}"),
    }
    if let Some(p) = job.trace {
        let trace: String = fit.trace.iter().enumerate().map(|(i, l)| trace_line(i, l) + "\n").collect();
        write(p, trace)?;
    }
    if let Some(p) = job.out_svg {
        let gt: Option<Vec<RBox>> = match job.gt {
            Some(g) => Some(load_dota(g)?.into_iter().map(|r| r.rbox).collect()),
            None => None,
        };
        let href = job.image.file_name().and_then(|n| n.to_str());
        let svg = render_svg(&Overlay {
            width: scene.image.width(),
            height: scene.image.height(),
            image_href: href,
            predicted: &fit.boxes,
            ground_truth: gt.as_deref(),
            points: &scene.points(),
        });
        write(p, svg)?;
    }
    Ok(())
}

fn scene_image(dir: &Path, stem: &str) -> Result<PathBuf> {
    ["png", "pgm"]
        .iter()
        .map(|e| dir.join(format!("{stem}.{e}")))
        .find(|p| p.exists())
        .with_context(|| format!("no image for {stem} in {}", dir.display()))
}

fn run_fit(a: &FitArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if a.with_ss {
        cfg.with_ss = true;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let Some(dir) = &a.scene_dir else {
        let job = FitJob {
            image: a.image.as_deref().expect("required by clap"),
            points: a.points.as_deref().expect("required by clap"),
            edge_map: a.edge_map.as_deref(),
            gt: a.gt.as_deref(),
            out_dota: a.out_dota.as_deref(),
            out_svg: a.out_svg.as_deref(),
            trace: a.trace.as_deref(),
        };
        return fit_one(&job, &cfg);
    };
    let mut stems: Vec<String> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok()?.file_name().into_string().ok())
        .filter_map(|n| n.strip_suffix(".points.txt").map(str::to_string))
        .collect();
    stems.sort();
    if stems.is_empty() {
        bail!("no *.points.txt files in {}", dir.display());
    }
    stems.par_iter().try_for_each(|stem| -> Result<()> {
        let image = scene_image(dir, stem)?;
        let points = dir.join(format!("{stem}.points.txt"));
        let gt = dir.join(format!("{stem}.gt.txt"));
        let out_dota = dir.join(format!("{stem}.fit.txt"));
        let out_svg = dir.join(format!("{stem}.fit.svg"));
        let job = FitJob {
            image: &image,
            points: &points,
            edge_map: None,
            gt: gt.exists().then_some(gt.as_path()),
            out_dota: Some(&out_dota),
            out_svg: Some(&out_svg),
            trace: None,
        };
        fit_one(&job, &cfg).with_context(|| format!("fitting {stem}"))
    })
}

fn run_loss(a: &LossArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let (scene, _, _) = load_scene(&a.image, &a.points)?;
    let boxes: Vec<RBox> = load_dota(&a.boxes)?.into_iter().map(|r| r.rbox).collect();
    if boxes.len() != scene.len() {
        bail!("{} boxes for {} points", boxes.len(), scene.len());
    }
    let cache = build_cache(&scene, &cfg, a.edge_map.as_deref())?;
    let l = total_layout_loss(&boxes, &scene, &cache, &cfg)?;
    println!("{}", loss_fields(&l).replace(' ', "\n"));
    Ok(())
}

fn run_eval(a: &EvalArgs) -> Result<()> {
    let labeled = |rs: Vec<DotaRecord>| -> Vec<LabeledBox> {
        rs.into_iter().map(|r| LabeledBox::new(r.rbox, r.category)).collect()
    };
    let pred = labeled(load_dota(&a.pred)?);
    let gt = labeled(load_dota(&a.gt)?);
    let report = format_report(&evaluate(&pred, &gt));
    print!("{report}");
    if let Some(p) = &a.out {
        write(p, &report)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match &cli.command {
        Command::Synth(a) => run_synth(a),
        Command::Voronoi(a) => run_voronoi(a),
        Command::Watershed(a) => run_watershed(a),
        Command::Fit(a) => run_fit(a),
        Command::Loss(a) => run_loss(a),
        Command::Eval(a) => run_eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
