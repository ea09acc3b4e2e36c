//! Command-line surface: evaluation, propagation, selection, consistency
//! scoring, synthetic scenarios, and brute-force oracles.
//!
//! Machine-readable results go to stdout as JSON lines (or a bare number
//! for `mcs`); diagnostics go to stderr. Exit codes: 0 success, 2 for I/O
//! or malformed files (clap also exits 2 on usage errors), 3 for semantic
//! shape/frame mismatches.

use clap::{Parser, Subcommand, ValueEnum};
use htr::config::RunConfig;
use htr::error::{Error, Result};
use htr::io::{container, jtable, pgm};
use htr::losses::BoxXYXY;
use htr::mask::Mask;
use htr::memory::{FeatureMap, MemoryWeights, DEFAULT_MASK_CHANNELS};
use htr::metrics::{
    a2d_metrics, intersection_union, video_metrics, AggregateRecord, JTable, MaskSequence,
    VideoRecord,
};
use htr::selection::{collaborate, select_reference_frames, ScoredFrame, VideoBundle};
use htr::synth::synth_scenario;
use htr::tensor::Tensor;
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "htr",
    version,
    about = "Hybrid-memory mask propagation and video segmentation metrics"
)]
struct Cli {
    /// Worker threads for per-video parallelism (default: all cores; env
    /// HTR_JOBS).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Seed for generated weights and synthetic data (env HTR_SEED).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compare predicted and ground-truth mask directories; prints one JSON
    /// line per video plus an aggregate line.
    Evaluate {
        /// Directory of predicted masks: one subdirectory of .pgm files per
        /// video, or a flat directory for a single video.
        #[arg(long)]
        pred_dir: PathBuf,
        /// Ground-truth masks, mirroring the prediction layout.
        #[arg(long)]
        gt_dir: PathBuf,
        /// Consistency thresholds reported in the aggregate line.
        #[arg(long, value_delimiter = ',', num_args = 1.., default_values_t = [0.1, 0.5, 0.9])]
        mcs_thresholds: Vec<f64>,
        /// Also report the sample-IoU precision suite over all frames.
        #[arg(long)]
        a2d: bool,
        /// Boundary-match tolerance in pixels (default: from the diagonal).
        #[arg(long)]
        boundary_tolerance: Option<f64>,
    },
    /// Propagate reference masks onto the remaining frames of one video.
    Propagate {
        /// Rank-4 feature container: frames x height x width x channels.
        #[arg(long)]
        features: PathBuf,
        /// Directory of per-frame reference masks named <index>.pgm (any
        /// zero padding); only selected frames need one.
        #[arg(long)]
        ref_masks: PathBuf,
        /// Rank-1 per-frame score container.
        #[arg(long)]
        scores: PathBuf,
        /// Fraction of frames memorized as references.
        #[arg(long, default_value_t = 0.25)]
        ratio: f64,
        /// Output directory; soft masks under soft/, thresholded under mask/.
        #[arg(long)]
        out: PathBuf,
        /// Load projection weights from this directory instead of seeding.
        #[arg(long)]
        weights_dir: Option<PathBuf>,
        /// Learned mask-feature channels for seeded weights.
        #[arg(long, default_value_t = DEFAULT_MASK_CHANNELS)]
        mask_channels: usize,
        /// Process the video in independent clips of this length.
        #[arg(long)]
        clip_len: Option<usize>,
    },
    /// Print the selected reference-frame indices as a JSON array.
    Select {
        /// Rank-1 per-frame score container.
        #[arg(long)]
        scores: PathBuf,
        #[arg(long, default_value_t = 0.25)]
        ratio: f64,
    },
    /// Mask consistency score of a CSV JTable at one threshold.
    Mcs {
        /// CSV with one row per video and one Jaccard value per frame.
        #[arg(long)]
        jtable: PathBuf,
        #[arg(long)]
        tau: f64,
    },
    /// Generate a synthetic scenario (features, scores, ground-truth masks).
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        frames: usize,
        #[arg(long, default_value_t = 4)]
        height: usize,
        #[arg(long, default_value_t = 4)]
        width: usize,
        #[arg(long, default_value_t = 8)]
        channels: usize,
        #[arg(long, default_value_t = 10.0)]
        separation: f64,
    },
    /// Brute-force reference computations for cross-checking.
    Oracle {
        #[arg(long, value_enum)]
        op: OracleOp,
        /// Query rows (readout).
        #[arg(long)]
        queries: Option<PathBuf>,
        /// Key rows (readout).
        #[arg(long)]
        keys: Option<PathBuf>,
        /// Value rows (readout).
        #[arg(long)]
        values: Option<PathBuf>,
        /// Square cost matrix (hungarian).
        #[arg(long)]
        cost: Option<PathBuf>,
        /// Predicted box "x1,y1,x2,y2" (giou).
        #[arg(long)]
        pred_box: Option<String>,
        /// Ground-truth box "x1,y1,x2,y2" (giou).
        #[arg(long)]
        gt_box: Option<String>,
        /// Joint feature rows (global).
        #[arg(long)]
        joint: Option<PathBuf>,
        /// Rank-1 per-row probabilities (global).
        #[arg(long)]
        probs: Option<PathBuf>,
        /// Aggregation threshold (global).
        #[arg(long, default_value_t = 0.5)]
        tau: f64,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OracleOp {
    Readout,
    Hungarian,
    Giou,
    Global,
}

fn main() {
    let cli = Cli::parse();
    let jobs = cli
        .jobs
        .or_else(|| env_parse::<usize>("HTR_JOBS"))
        .filter(|&j| j > 0);
    if let Some(jobs) = jobs {
        // Best effort: the pool may already exist in tests.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global();
    }
    let seed = cli
        .seed
        .or_else(|| env_parse::<u64>("HTR_SEED"))
        .unwrap_or(0);
    if let Err(err) = run(cli.command, seed) {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}

fn env_parse<T: std::str::FromStr>(name: &str) -> Option<T> {
    std::env::var(name).ok().and_then(|v| v.parse().ok())
}

fn run(command: Command, seed: u64) -> Result<()> {
    match command {
        Command::Evaluate {
            pred_dir,
            gt_dir,
            mcs_thresholds,
            a2d,
            boundary_tolerance,
        } => cmd_evaluate(&pred_dir, &gt_dir, &mcs_thresholds, a2d, boundary_tolerance),
        Command::Propagate {
            features,
            ref_masks,
            scores,
            ratio,
            out,
            weights_dir,
            mask_channels,
            clip_len,
        } => cmd_propagate(
            &features,
            &ref_masks,
            &scores,
            ratio,
            &out,
            weights_dir.as_deref(),
            mask_channels,
            clip_len,
            seed,
        ),
        Command::Select { scores, ratio } => cmd_select(&scores, ratio),
        Command::Mcs { jtable, tau } => cmd_mcs(&jtable, tau),
        Command::Synth {
            out,
            frames,
            height,
            width,
            channels,
            separation,
        } => cmd_synth(&out, frames, height, width, channels, separation, seed),
        Command::Oracle {
            op,
            queries,
            keys,
            values,
            cost,
            pred_box,
            gt_box,
            joint,
            probs,
            tau,
        } => cmd_oracle(
            op, queries, keys, values, cost, pred_box, gt_box, joint, probs, tau,
        ),
    }
}

/// Lists the videos under `dir`: subdirectories with .pgm frames, or the
/// directory itself as a single video when it holds .pgm files directly.
fn discover_videos(dir: &Path) -> Result<Vec<(String, Vec<PathBuf>)>> {
    let mut videos = Vec::new();
    let mut loose = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let path = entry.path();
        if path.is_dir() {
            let frames = pgm_files(&path)?;
            if !frames.is_empty() {
                videos.push((entry.file_name().to_string_lossy().into_owned(), frames));
            }
        } else if path.extension().is_some_and(|e| e == "pgm") {
            loose.push(path);
        }
    }
    if videos.is_empty() && !loose.is_empty() {
        // Flat directory = one video. A fixed id lets two flat directories
        // pair up regardless of their names.
        loose.sort();
        videos.push(("video".into(), loose));
    }
    if videos.is_empty() {
        return Err(Error::EmptyInput("no .pgm masks found"));
    }
    videos.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(videos)
}

fn pgm_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "pgm"))
        .collect();
    files.sort();
    Ok(files)
}

fn read_sequence(id: &str, frames: &[PathBuf]) -> Result<MaskSequence> {
    let masks = frames
        .iter()
        .map(|p| pgm::read_mask(p))
        .collect::<Result<Vec<_>>>()?;
    MaskSequence::new(id.to_string(), (0..masks.len()).collect(), masks)
}

fn print_line(line: &str) -> Result<()> {
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    writeln!(lock, "{line}")?;
    Ok(())
}

fn cmd_evaluate(
    pred_dir: &Path,
    gt_dir: &Path,
    mcs_thresholds: &[f64],
    a2d: bool,
    boundary_tolerance: Option<f64>,
) -> Result<()> {
    let cfg = RunConfig {
        mcs_thresholds: mcs_thresholds.to_vec(),
        boundary_tolerance,
        ..RunConfig::default()
    };
    cfg.validate()?;

    let preds = discover_videos(pred_dir)?;
    let gts = discover_videos(gt_dir)?;
    let pred_ids: Vec<&String> = preds.iter().map(|(id, _)| id).collect();
    let gt_ids: Vec<&String> = gts.iter().map(|(id, _)| id).collect();
    if pred_ids != gt_ids {
        return Err(Error::FrameMismatch(format!(
            "video sets differ: predictions {pred_ids:?} vs ground truth {gt_ids:?}"
        )));
    }

    struct PerVideo {
        record: VideoRecord,
        frame_js: Vec<f64>,
        samples: Vec<(f64, u64, u64)>,
    }

    let results: Vec<PerVideo> = preds
        .par_iter()
        .zip(gts.par_iter())
        .map(|((id, pred_frames), (_, gt_frames))| -> Result<PerVideo> {
            if pred_frames.len() != gt_frames.len() {
                return Err(Error::FrameMismatch(format!(
                    "video {id}: {} predicted frames vs {} ground-truth frames",
                    pred_frames.len(),
                    gt_frames.len()
                )));
            }
            let pred = read_sequence(id, pred_frames)?;
            let gt = read_sequence(id, gt_frames)?;
            let (vm, frame_js) = video_metrics(&pred, &gt, boundary_tolerance)?;
            let samples = if a2d {
                pred.masks
                    .iter()
                    .zip(&gt.masks)
                    .map(|(p, g)| {
                        let (i, u) = intersection_union(p, g)?;
                        let iou = if u == 0 { 1.0 } else { i as f64 / u as f64 };
                        Ok((iou, i, u))
                    })
                    .collect::<Result<Vec<_>>>()?
            } else {
                Vec::new()
            };
            Ok(PerVideo {
                record: VideoRecord {
                    video: id.clone(),
                    frames: pred.len(),
                    j: vm.j,
                    f: vm.f,
                    jf: vm.jf,
                },
                frame_js,
                samples,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    for r in &results {
        print_line(&serde_json::to_string(&r.record).expect("serializable record"))?;
    }

    let n = results.len() as f64;
    let table = JTable::new(results.iter().map(|r| r.frame_js.clone()).collect())?;
    let mut mcs_map = BTreeMap::new();
    for &tau in mcs_thresholds {
        mcs_map.insert(format!("{tau}"), htr::metrics::mcs(&table, tau)?);
    }
    let a2d_block = if a2d {
        let mut ious = Vec::new();
        let mut inters = Vec::new();
        let mut unions = Vec::new();
        for r in &results {
            for &(iou, i, u) in &r.samples {
                ious.push(iou);
                inters.push(i as f64);
                unions.push(u as f64);
            }
        }
        Some(a2d_metrics(&ious, &inters, &unions)?)
    } else {
        None
    };
    let aggregate = AggregateRecord {
        aggregate: true,
        videos: results.len(),
        j: results.iter().map(|r| r.record.j).sum::<f64>() / n,
        f: results.iter().map(|r| r.record.f).sum::<f64>() / n,
        jf: results.iter().map(|r| r.record.jf).sum::<f64>() / n,
        mcs: mcs_map,
        a2d: a2d_block,
    };
    print_line(&serde_json::to_string(&aggregate).expect("serializable record"))
}

fn read_feature_frames(path: &Path) -> Result<Vec<FeatureMap>> {
    let tensor = container::read_tensor(path)?;
    if tensor.rank() != 4 {
        return Err(Error::ShapeMismatch(format!(
            "features must be rank 4 (frames x height x width x channels), got {:?}",
            tensor.dims()
        )));
    }
    let (t, h, w, c) = (
        tensor.dims()[0],
        tensor.dims()[1],
        tensor.dims()[2],
        tensor.dims()[3],
    );
    let frame_len = h * w * c;
    (0..t)
        .map(|i| {
            let slice = tensor.data()[i * frame_len..(i + 1) * frame_len].to_vec();
            FeatureMap::new(h, w, Tensor::new(vec![h * w, c], slice)?)
        })
        .collect()
}

fn read_scores(path: &Path, frames: usize) -> Result<Vec<f32>> {
    let tensor = container::read_tensor(path)?;
    if tensor.rank() != 1 || tensor.len() != frames {
        return Err(Error::ShapeMismatch(format!(
            "scores must be rank 1 with {frames} entries, got {:?}",
            tensor.dims()
        )));
    }
    Ok(tensor.data().to_vec())
}

/// Reads `<index>.pgm` masks (any zero padding in the stem) from a
/// directory.
fn read_indexed_masks(dir: &Path) -> Result<BTreeMap<usize, Mask>> {
    let mut masks = BTreeMap::new();
    for path in pgm_files(dir)? {
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let index: usize = stem.parse().map_err(|_| {
            Error::Malformed(format!(
                "mask file name {stem:?} is not a frame index (expected <index>.pgm)"
            ))
        })?;
        masks.insert(index, pgm::read_mask(&path)?);
    }
    Ok(masks)
}

#[allow(clippy::too_many_arguments)]
fn cmd_propagate(
    features: &Path,
    ref_masks: &Path,
    scores: &Path,
    ratio: f64,
    out: &Path,
    weights_dir: Option<&Path>,
    mask_channels: usize,
    clip_len: Option<usize>,
    seed: u64,
) -> Result<()> {
    let frames = read_feature_frames(features)?;
    let score_values = read_scores(scores, frames.len())?;
    let masks = read_indexed_masks(ref_masks)?;
    let channels = frames[0].channels();
    let weights = match weights_dir {
        Some(dir) => MemoryWeights::load_dir(dir)?,
        None => MemoryWeights::seeded(seed, channels, mask_channels)?,
    };
    let bundle = VideoBundle {
        id: "video".into(),
        scored: score_values
            .iter()
            .enumerate()
            .map(|(i, &score)| ScoredFrame {
                index: i,
                score,
                kernel: None,
                mask: masks.get(&i).cloned(),
            })
            .collect(),
        frames,
    };
    let cfg = RunConfig {
        memorized_ratio: ratio,
        clip_len,
        seed,
        ..RunConfig::default()
    };
    let result = collaborate(&bundle, &weights, &cfg)?;

    let soft_dir = out.join("soft");
    let mask_dir = out.join("mask");
    std::fs::create_dir_all(&soft_dir)?;
    std::fs::create_dir_all(&mask_dir)?;
    for (i, (soft, binary)) in result
        .soft_masks
        .iter()
        .zip(&result.sequence.masks)
        .enumerate()
    {
        pgm::write_mask(&soft_dir.join(format!("{i:05}.pgm")), soft)?;
        pgm::write_mask(&mask_dir.join(format!("{i:05}.pgm")), binary)?;
    }
    eprintln!(
        "propagated {} frames from {} references into {}",
        result.sequence.len(),
        result.reference_indices.len(),
        out.display()
    );
    Ok(())
}

fn cmd_select(scores: &Path, ratio: f64) -> Result<()> {
    let tensor = container::read_tensor(scores)?;
    if tensor.rank() != 1 {
        return Err(Error::ShapeMismatch(format!(
            "scores must be rank 1, got {:?}",
            tensor.dims()
        )));
    }
    let selected = select_reference_frames(tensor.data(), ratio)?;
    print_line(&serde_json::to_string(&selected).expect("serializable indices"))
}

fn cmd_mcs(jtable: &Path, tau: f64) -> Result<()> {
    let table = jtable::read(jtable)?;
    let value = htr::metrics::mcs(&table, tau)?;
    print_line(&format!("{value}"))
}

fn cmd_synth(
    out: &Path,
    frames: usize,
    height: usize,
    width: usize,
    channels: usize,
    separation: f64,
    seed: u64,
) -> Result<()> {
    let scenario = synth_scenario(seed, frames, height, width, channels, separation)?;
    std::fs::create_dir_all(out)?;

    let (h, w, c) = (height, width, channels);
    let mut data = Vec::with_capacity(frames * h * w * c);
    for fm in &scenario.features {
        data.extend_from_slice(fm.data().data());
    }
    container::write_tensor(
        &out.join("features.htrt"),
        &Tensor::new(vec![frames, h, w, c], data)?,
    )?;
    container::write_tensor(
        &out.join("scores.htrt"),
        &Tensor::new(vec![frames], scenario.scores.clone())?,
    )?;
    let gt_dir = out.join("gt");
    std::fs::create_dir_all(&gt_dir)?;
    for (i, mask) in scenario.gt_masks.iter().enumerate() {
        pgm::write_mask(&gt_dir.join(format!("{i:05}.pgm")), mask)?;
    }
    eprintln!(
        "wrote scenario: {} frames of {}x{} nodes, {} channels, separation {}",
        frames, height, width, channels, separation
    );
    Ok(())
}

fn parse_box(text: &str) -> Result<BoxXYXY> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| Error::Malformed(format!("bad box coordinate {p:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    if parts.len() != 4 {
        return Err(Error::Malformed(format!(
            "box needs 4 comma-separated coordinates, got {}",
            parts.len()
        )));
    }
    BoxXYXY::new(parts[0], parts[1], parts[2], parts[3])
}

fn require<T>(value: Option<T>, flag: &str) -> Result<T> {
    value.ok_or_else(|| Error::InvalidConfig(format!("oracle op requires {flag}")))
}

#[allow(clippy::too_many_arguments)]
fn cmd_oracle(
    op: OracleOp,
    queries: Option<PathBuf>,
    keys: Option<PathBuf>,
    values: Option<PathBuf>,
    cost: Option<PathBuf>,
    pred_box: Option<String>,
    gt_box: Option<String>,
    joint: Option<PathBuf>,
    probs: Option<PathBuf>,
    tau: f64,
) -> Result<()> {
    let rows64 = |t: &Tensor| -> Vec<Vec<f64>> {
        (0..t.rows())
            .map(|i| t.row(i).iter().map(|&v| f64::from(v)).collect())
            .collect()
    };
    match op {
        OracleOp::Readout => {
            let q = container::read_tensor(&require(queries, "--queries")?)?;
            let k = container::read_tensor(&require(keys, "--keys")?)?;
            let v = container::read_tensor(&require(values, "--values")?)?;
            let out = htr::oracle::readout_naive(&rows64(&q), &rows64(&k), &rows64(&v))?;
            print_line(
                &serde_json::to_string(&serde_json::json!({ "readout": out }))
                    .expect("serializable"),
            )
        }
        OracleOp::Hungarian => {
            let c = container::read_tensor(&require(cost, "--cost")?)?;
            let (assignment, total) = htr::oracle::hungarian_brute_force(&c)?;
            print_line(
                &serde_json::to_string(
                    &serde_json::json!({ "assignment": assignment, "cost": total }),
                )
                .expect("serializable"),
            )
        }
        OracleOp::Giou => {
            let p = parse_box(&require(pred_box, "--pred-box")?)?;
            let g = parse_box(&require(gt_box, "--gt-box")?)?;
            let (l1, giou_loss) = htr::oracle::giou_loss_naive(
                (p.x1(), p.y1(), p.x2(), p.y2()),
                (g.x1(), g.y1(), g.x2(), g.y2()),
            );
            print_line(
                &serde_json::to_string(&serde_json::json!({ "l1": l1, "giou_loss": giou_loss }))
                    .expect("serializable"),
            )
        }
        OracleOp::Global => {
            let j = container::read_tensor(&require(joint, "--joint")?)?;
            let p = container::read_tensor(&require(probs, "--probs")?)?;
            if p.rank() != 1 || p.len() != j.rows() {
                return Err(Error::ShapeMismatch(format!(
                    "probs must be rank 1 with {} entries, got {:?}",
                    j.rows(),
                    p.dims()
                )));
            }
            let token = htr::oracle::aggregate_naive(&j, p.data(), tau)
                .ok_or(Error::GlobalTokenUndefined)?;
            print_line(
                &serde_json::to_string(&serde_json::json!({ "token": token }))
                    .expect("serializable"),
            )
        }
    }
}
