//! `crowd-assign` command line. Exit codes: 0 success, 1 runtime failure,
//! 2 usage or configuration error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::error::{Error, IoError};
use crate::experiment::{self, AssignerKind, Summary};
use crate::io::svg::{self, Axes, Series};
use crate::io::{
    parse_coco, parse_detections, parse_odgt, write_report, DatasetRecord, Figure, Format, HarnessConfig, Report, Table,
};
use crate::metrics::{aar, evaluate, fpn_allocation, match_detections, Detection, EvalSubset};
use crate::scene::{evolution_snapshots, Scene};

pub const THREADS_ENV: &str = "CROWD_ASSIGN_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "crowd-assign",
    version,
    about = "Label assignment experiments on synthetic crowds"
)]
pub struct Cli {
    /// Harness configuration (JSON). Defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides `run.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, global = true, default_value = "json")]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Assign one scene and report per-GT positives.
    Assign(AssignArgs),
    /// Loss-aware assignment over a range of K.
    SweepK(SweepArgs),
    /// Several assigners side by side on one scene batch.
    Compare(CompareArgs),
    /// Loss-aware positives as the predictor matures.
    Evolve(EvolveArgs),
    /// Miss rate, AP and recall of a detection file.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct AssignArgs {
    /// Defaults to `assigner.name` from the config.
    #[arg(long)]
    pub assigner: Option<AssignerKind>,
    /// Annotation file (odgt lines or COCO JSON) instead of a synthetic scene.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Image to take from the dataset; the first record by default.
    #[arg(long)]
    pub image: Option<String>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// `a..b` (inclusive) or a single K.
    #[arg(long, default_value = "1..16", value_parser = parse_k_range)]
    pub k_range: KRange,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KRange(pub usize, pub usize);

impl KRange {
    pub fn values(self) -> Vec<usize> {
        (self.0..=self.1).collect()
    }
}

pub fn parse_k_range(s: &str) -> Result<KRange, String> {
    let num = |t: &str| -> Result<usize, String> {
        let k: usize = t
            .trim()
            .parse()
            .map_err(|_| format!("`{t}` is not a non-negative integer"))?;
        if k == 0 {
            return Err("K must be at least 1".into());
        }
        Ok(k)
    };
    let (a, b) = match s.split_once("..") {
        Some((a, b)) => (num(a)?, num(b.trim_start_matches('='))?),
        None => {
            let k = num(s)?;
            (k, k)
        }
    };
    if a > b {
        return Err(format!("empty K range {a}..{b}"));
    }
    Ok(KRange(a, b))
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Comma-separated, at least two.
    #[arg(long, value_delimiter = ',', default_value = "lla,retinanet,fcos,atss")]
    pub assigners: Vec<AssignerKind>,
}

#[derive(Debug, Args)]
pub struct EvolveArgs {
    /// Comma-separated maturities in [0, 1]; overrides `run.schedule`. An
    /// empty string gives an empty schedule.
    #[arg(long)]
    pub schedule: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Ground truth: `.odgt` lines, or COCO JSON otherwise.
    #[arg(long)]
    pub gt: PathBuf,
    /// COCO-style results JSON.
    #[arg(long)]
    pub dets: PathBuf,
    #[arg(long, default_value = "reasonable", value_parser = parse_subset)]
    pub subset: NamedSubset,
}

#[derive(Debug, Clone)]
pub struct NamedSubset(pub String, pub EvalSubset);

fn parse_subset(s: &str) -> Result<NamedSubset, String> {
    let subset = match s {
        "all" => EvalSubset::all(),
        "reasonable" => EvalSubset::reasonable(),
        "heavy" => EvalSubset::heavy(),
        _ => return Err(format!("unknown subset `{s}` (expected all, reasonable or heavy)")),
    };
    Ok(NamedSubset(s.to_string(), subset))
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(io) if io.is_usage() => CliError::Usage(io.to_string()),
            other => CliError::Runtime(other),
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        Error::from(e).into()
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Runtime(e) => write!(f, "{e}"),
        }
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match configure_threads().and_then(|_| run(&cli)) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?;
    // a pool may already exist when called twice in one process; keep it
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn load_config(cli: &Cli) -> Result<HarnessConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => HarnessConfig::load(p)?,
        None => HarnessConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.run.seed = s;
    }
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<Vec<PathBuf>, CliError> {
    let mut cfg = load_config(cli)?;
    let report = match &cli.command {
        Command::Assign(a) => cmd_assign(&cfg, a)?,
        Command::SweepK(s) => cmd_sweep_k(&cfg, s.k_range)?,
        Command::Compare(c) => cmd_compare(&cfg, &c.assigners)?,
        Command::Evolve(e) => {
            if let Some(s) = &e.schedule {
                cfg.run.schedule = parse_schedule(s).map_err(CliError::Usage)?;
                cfg.validate()?;
            }
            cmd_evolve(&cfg)?
        }
        Command::Eval(e) => cmd_eval(&cfg, e)?,
    };
    Ok(write_report(&report, cli.format, &cli.out)?)
}

fn parse_schedule(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| format!("bad maturity `{t}` in --schedule"))
        })
        .collect()
}

fn opt(v: Option<f64>) -> Value {
    v.map_or(Value::Null, Value::from)
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| {
        IoError::File {
            path: path.to_path_buf(),
            source: e,
        }
        .into()
    })
}

fn load_dataset(path: &Path) -> Result<Vec<DatasetRecord>, CliError> {
    let text = read(path)?;
    let recs = if path.extension().is_some_and(|e| e == "odgt") {
        parse_odgt(text.as_bytes())?
    } else {
        parse_coco(&text)?
    };
    Ok(recs)
}

pub fn cmd_assign(cfg: &HarnessConfig, args: &AssignArgs) -> Result<Report, CliError> {
    let kind = args.assigner.unwrap_or(cfg.assigner.name);
    let seed = cfg.run.seed;
    let (scene, source) = match &args.dataset {
        None => (experiment::make_scene(cfg, seed)?, json!({"synthetic_seed": seed})),
        Some(path) => {
            let recs = load_dataset(path)?;
            let rec = match &args.image {
                Some(id) => recs.iter().find(|r| &r.image_id == id),
                None => recs.first(),
            }
            .ok_or_else(|| CliError::Usage(format!("no matching image in {}", path.display())))?;
            let (w, h) = rec.image_size();
            let scene = Scene::from_annotations(w, h, rec.ground_truth(), &rec.visible());
            (scene, json!({"image_id": rec.image_id}))
        }
    };
    let run = experiment::run_assigner(cfg, kind, &scene, seed)?;
    let a = &run.outcome.assignment;

    let mut r = Report::new("assign");
    r.set("assigner", kind.name());
    r.set("source", source);
    r.set("num_anchors", a.len());
    r.set("num_gts", scene.len());
    r.set(
        "labels",
        json!({"positive": a.num_positive(), "negative": a.num_negative(), "ignore": a.num_ignore()}),
    );
    let aar_value = match aar(&run.outcome.matches, a) {
        Ok(x) => serde_json::to_value(x).expect("serializable"),
        Err(_) => Value::Null,
    };
    r.set("aar", aar_value);
    r.set(
        "stage1_matches",
        run.outcome.matches.per_gt.iter().map(Vec::len).collect::<Vec<_>>(),
    );

    let alloc = fpn_allocation(a, &run.anchors, &scene.gts);
    let mut t = Table::new([
        "gt",
        "x1",
        "y1",
        "x2",
        "y2",
        "area",
        "occlusion",
        "ignore",
        "positives",
        "stage",
        "visible_share",
    ]);
    for (i, al) in alloc.iter().enumerate() {
        let b = scene.gts.boxes[i];
        t.push(vec![
            json!(i),
            json!(b.x1),
            json!(b.y1),
            json!(b.x2),
            json!(b.y2),
            json!(al.area),
            json!(scene.occlusion[i]),
            json!(scene.gts.ignore[i]),
            json!(al.positives),
            al.stage.map_or(Value::Null, Value::from),
            opt(crate::scene::visible_fraction(&scene, &run.anchors, a, i)),
        ]);
    }
    r.table = Some(t);
    r.figures.push(Figure {
        name: "assign_overlay".into(),
        svg: svg::scene_overlay(&format!("{kind} positives"), &scene, &run.anchors, a),
    });
    Ok(r)
}

fn summary_row(s: &Summary) -> Vec<Value> {
    let p = s.proxy.as_ref();
    let mut row = vec![
        opt(p.map(|e| e.mr)),
        opt(p.map(|e| e.ap)),
        opt(p.map(|e| e.recall)),
        opt(s.aar_mean),
        opt(s.aar_pooled),
        json!(s.positives_per_gt),
        opt(s.visible_share_mean),
    ];
    row.extend(s.stage_histogram.iter().map(|c| json!(c)));
    row
}

fn summary_columns(first: &str, levels: usize) -> Vec<String> {
    let mut c: Vec<String> = [
        first,
        "proxy_mr",
        "proxy_ap",
        "proxy_recall",
        "aar_mean",
        "aar_pooled",
        "positives_per_gt",
        "visible_share_occluded",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    c.extend((0..levels).map(|l| format!("stage{l}")));
    c.push("unassigned".into());
    c
}

const PROXY_NOTE: &str = "proxy_* metrics come from the mock predictor pipeline, not a trained detector";

pub fn cmd_sweep_k(cfg: &HarnessConfig, range: KRange) -> Result<Report, CliError> {
    let ks = range.values();
    let sums = experiment::sweep_k(cfg, &ks)?;
    let levels = cfg.anchors.lla.num_levels();
    let mut t = Table::new(summary_columns("k", levels));
    for (k, s) in ks.iter().zip(&sums) {
        let mut row = vec![json!(k)];
        row.extend(summary_row(s));
        t.push(row);
    }
    let mrs: Vec<f64> = sums.iter().filter_map(|s| s.proxy.as_ref().map(|p| p.mr)).collect();
    let spread = (mrs.len() == ks.len() && !mrs.is_empty()).then(|| {
        let lo = mrs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = mrs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (hi - lo) / lo
    });
    let mut r = Report::new("sweep_k");
    r.set("note", PROXY_NOTE);
    r.set("k_min", range.0);
    r.set("k_max", range.1);
    r.set("scenes", cfg.run.scenes);
    r.set("seed", cfg.run.seed);
    r.set("proxy_mr_relative_spread", opt(spread));
    r.table = Some(t);
    r.figures.push(Figure {
        name: "sweep_k_proxy_mr".into(),
        svg: svg::line_chart(
            &Axes {
                title: "proxy MR vs K".into(),
                x_label: "K".into(),
                y_label: "proxy MR (%)".into(),
                log_x: false,
                log_y: false,
            },
            &[Series {
                name: "lla".into(),
                points: ks
                    .iter()
                    .zip(&sums)
                    .filter_map(|(k, s)| s.proxy.as_ref().map(|p| (*k as f64, p.mr)))
                    .collect(),
            }],
        ),
    });
    Ok(r)
}

pub fn cmd_compare(cfg: &HarnessConfig, kinds: &[AssignerKind]) -> Result<Report, CliError> {
    if kinds.len() < 2 {
        return Err(CliError::Usage("compare needs at least two assigners".into()));
    }
    let (sums, batch) = experiment::compare(cfg, kinds)?;
    let levels = kinds
        .iter()
        .map(|k| cfg.anchors.for_assigner(*k).num_levels())
        .max()
        .unwrap_or(0);
    let mut t = Table::new(summary_columns("assigner", levels));
    for s in &sums {
        let mut row = vec![json!(s.assigner.name())];
        let mut rest = summary_row(s);
        // pad shallower pyramids so columns line up; unassigned stays last
        let unassigned = rest.pop().expect("histogram has an unassigned slot");
        let have = s.stage_histogram.len() - 1;
        rest.extend((have..levels).map(|_| json!(0)));
        rest.push(unassigned);
        row.extend(rest);
        t.push(row);
    }

    let mut ordering = Vec::new();
    for a in sums.iter().filter(|s| s.assigner.is_loss_aware()) {
        for b in sums.iter().filter(|s| !s.assigner.is_loss_aware()) {
            ordering.push(json!({
                "loss_aware": a.assigner.name(),
                "baseline": b.assigner.name(),
                "holds": match (a.aar_mean, b.aar_mean) {
                    (Some(x), Some(y)) => Value::Bool(x <= y),
                    _ => Value::Null,
                },
            }));
        }
    }

    let series: Vec<Series> = kinds
        .iter()
        .enumerate()
        .map(|(k, kind)| Series {
            name: kind.name().into(),
            points: batch
                .iter()
                .flat_map(|row| row[k].allocation.iter())
                .filter_map(|a| a.stage.map(|s| (a.area.sqrt(), s as f64 + 0.08 * k as f64)))
                .collect(),
        })
        .collect();

    let mut r = Report::new("compare");
    r.set("note", PROXY_NOTE);
    r.set("assigners", kinds.iter().map(|k| k.name()).collect::<Vec<_>>());
    r.set("scenes", cfg.run.scenes);
    r.set("seed", cfg.run.seed);
    r.set("aar_ordering", ordering);
    r.table = Some(t);
    r.figures.push(Figure {
        name: "compare_allocation".into(),
        svg: svg::scatter(
            &Axes {
                title: "modal pyramid stage per GT".into(),
                x_label: "sqrt(GT area)".into(),
                y_label: "stage".into(),
                log_x: true,
                log_y: false,
            },
            &series,
        ),
    });
    Ok(r)
}

pub fn cmd_evolve(cfg: &HarnessConfig) -> Result<Report, CliError> {
    let seed = cfg.run.seed;
    let scene = experiment::make_scene(cfg, seed)?;
    let anchors =
        crate::anchors::build_anchor_grid(scene.image_w, scene.image_h, &cfg.anchors.lla).map_err(Error::from)?;
    let predictor = crate::scene::MockPredictorConfig {
        seed: cfg.predictor.seed.wrapping_add(seed),
        ..cfg.predictor
    };
    let snaps = evolution_snapshots(&scene, &anchors, &predictor, &cfg.assigner.lla, &cfg.run.schedule).map_err(
        |e| match e {
            crate::scene::EvolutionError::Scene(s) => Error::from(s),
            crate::scene::EvolutionError::Assign(a) => Error::from(a),
        },
    )?;

    let mut r = Report::new("evolve");
    r.set("seed", seed);
    r.set("schedule", cfg.run.schedule.clone());
    let mut t = Table::new(["step", "maturity", "positives", "visible_share_occluded", "aar"]);
    for (step, s) in snaps.iter().enumerate() {
        let a = &s.outcome.assignment;
        t.push(vec![
            json!(step),
            json!(s.maturity),
            json!(a.num_positive()),
            opt(experiment::visible_share(
                &scene,
                &anchors,
                a,
                experiment::HEAVY_OCCLUSION,
            )),
            opt(aar(&s.outcome.matches, a).ok().map(|x| x.percent)),
        ]);
        r.figures.push(Figure {
            name: format!("evolve_{step:02}"),
            svg: svg::scene_overlay(&format!("maturity {:.2}", s.maturity), &scene, &anchors, a),
        });
    }
    r.table = Some(t);
    Ok(r)
}

pub fn cmd_eval(cfg: &HarnessConfig, args: &EvalArgs) -> Result<Report, CliError> {
    let recs = load_dataset(&args.gt)?;
    let dets = parse_detections(&read(&args.dets)?)?;
    let mut by_image: BTreeMap<&str, Vec<Detection>> = BTreeMap::new();
    for d in &dets {
        by_image.entry(d.image_id.as_str()).or_default().push(d.clone());
    }
    let known: std::collections::HashSet<&str> = recs.iter().map(|r| r.image_id.as_str()).collect();
    let stray: usize = by_image
        .iter()
        .filter(|(k, _)| !known.contains(*k))
        .map(|(_, v)| v.len())
        .sum();
    let matches: Vec<_> = recs
        .iter()
        .map(|rec| {
            let gts = args.subset.1.apply(&rec.ground_truth(), &rec.visible());
            let d = by_image.get(rec.image_id.as_str()).map_or(&[][..], |v| v.as_slice());
            match_detections(d, &gts, cfg.metrics.match_iou)
        })
        .collect();
    let res = evaluate(&matches, cfg.metrics.ap_mode).map_err(Error::from)?;

    let mut r = Report::new("eval");
    r.set("subset", args.subset.0.clone());
    r.set("mr", res.mr);
    r.set("ap", res.ap);
    r.set("recall", res.recall);
    r.set("num_images", res.num_images);
    r.set("num_gt", res.num_gt);
    r.set("detections_without_image", stray);
    let mut t = Table::new(["score", "fppi", "miss_rate", "recall", "precision"]);
    for p in &res.fppi_curve {
        t.push(vec![
            json!(p.score),
            json!(p.fppi),
            json!(p.miss_rate),
            json!(p.recall),
            json!(p.precision),
        ]);
    }
    r.table = Some(t);
    r.figures.push(Figure {
        name: "eval_miss_rate".into(),
        svg: svg::line_chart(
            &Axes {
                title: format!("miss rate vs FPPI ({})", args.subset.0),
                x_label: "false positives per image".into(),
                y_label: "miss rate".into(),
                log_x: true,
                log_y: true,
            },
            &[Series {
                name: format!("MR {:.2}%", res.mr),
                points: res.fppi_curve.iter().skip(1).map(|p| (p.fppi, p.miss_rate)).collect(),
            }],
        ),
    });
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k_range_forms() {
        assert_eq!(parse_k_range("1..16").unwrap().values().len(), 16);
        assert_eq!(parse_k_range("7").unwrap().values(), vec![7]);
        assert_eq!(parse_k_range("3..=5").unwrap(), KRange(3, 5));
        assert!(parse_k_range("0").is_err());
        assert!(parse_k_range("0..4").is_err());
        assert!(parse_k_range("5..2").is_err());
        assert!(parse_k_range("x").is_err());
    }

    #[test]
    fn schedule_parsing() {
        assert_eq!(parse_schedule("").unwrap(), Vec::<f64>::new());
        assert_eq!(parse_schedule("0, 0.5,1").unwrap(), vec![0.0, 0.5, 1.0]);
        assert!(parse_schedule("a").is_err());
    }

    #[test]
    fn compare_needs_two() {
        let e = cmd_compare(&HarnessConfig::default(), &[AssignerKind::Lla]).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn unknown_assigner_is_a_usage_error() {
        let e = Cli::try_parse_from(["crowd-assign", "compare", "--assigners", "lla,yolo"]).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }
}
