use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::{json, Value};

use stvg_core::fusion::{fuse, GapPolicy};
use stvg_core::geometry::BBox;
use stvg_core::harness::config::Config;
use stvg_core::harness::manifest::{count_split_records, validate_manifest, DatasetManifest};
use stvg_core::harness::records::{emit_records, read_records, write_records, GroundingRecord, RecordError};
use stvg_core::harness::synth::{synth_dataset, write_split_files, SynthParams};
use stvg_core::linking::{link_videos, LinkParams};
use stvg_core::losses::{
    box_losses, contrastive_losses, guided_attention_loss, kl_temporal_loss, mmn_iou_loss, mmn_total, tubedetr_total,
    AttentionRow, SimilarityMatrix,
};
use stvg_core::metrics::{evaluate_dataset, Comparison, MissingPrediction};
use stvg_core::moments::{
    decode_start_end, moment_iou_targets, select_moment, span_to_segment, ContrastiveNorm, TemporalDistributions,
};
use stvg_core::tubes::{fixed_length_clips, split_into_clips, ClipSpan, Coverage, Tube};

/// Exit status categories.
#[derive(Debug, Clone, Copy)]
enum Category {
    Usage = 2,
    Io = 3,
    Format = 4,
    Validation = 5,
    Compute = 6,
}

impl Category {
    fn label(self) -> &'static str {
        match self {
            Category::Usage => "usage",
            Category::Io => "io",
            Category::Format => "format",
            Category::Validation => "validation",
            Category::Compute => "compute",
        }
    }
}

struct Failure {
    category: Category,
    error: anyhow::Error,
}

type CliResult<T> = Result<T, Failure>;

trait Categorize<T> {
    fn cat(self, category: Category) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> Categorize<T> for Result<T, E> {
    fn cat(self, category: Category) -> CliResult<T> {
        self.map_err(|e| Failure {
            category,
            error: e.into(),
        })
    }
}

fn fail<T>(category: Category, msg: impl Into<String>) -> CliResult<T> {
    Err(Failure {
        category,
        error: anyhow!(msg.into()),
    })
}

fn record_category(e: &RecordError) -> Category {
    match e {
        RecordError::Io(_) | RecordError::Serialize(_) => Category::Io,
        RecordError::Parse { .. } => Category::Format,
        RecordError::InvalidTube { .. } | RecordError::InvalidScores { .. } => Category::Validation,
    }
}

fn load_records(path: &Path) -> CliResult<Vec<GroundingRecord>> {
    read_records(path).map_err(|e| Failure {
        category: record_category(&e),
        error: anyhow::Error::new(e).context(format!("reading {}", path.display())),
    })
}

fn store_records(records: &[GroundingRecord], out: Option<&Path>) -> CliResult<()> {
    let res = match out {
        Some(p) => write_records(records, p).with_context(|| format!("writing {}", p.display())),
        None => emit_records(io::stdout().lock(), records).context("writing stdout"),
    };
    res.cat(Category::Io)
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .cat(Category::Io)
}

/// JSON when the extension says so, TOML otherwise.
fn read_document<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = read_text(path)?;
    let parsed = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(anyhow::Error::from)
    } else {
        toml::from_str(&text).map_err(anyhow::Error::from)
    };
    parsed
        .with_context(|| format!("parsing {}", path.display()))
        .cat(Category::Format)
}

#[derive(Parser)]
#[command(name = "stvg", version, about = "Spatio-temporal video grounding toolkit")]
struct Cli {
    /// TOML config with default parameters
    #[arg(long, global = true, env = "STVG_CONFIG")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum CmpArg {
    Strict,
    Inclusive,
}

#[derive(Clone, Copy, ValueEnum)]
enum MissingArg {
    Zero,
    Skip,
}

#[derive(Clone, Copy, ValueEnum)]
enum NormArg {
    Sigmoid,
    Raw,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossKind {
    MmnIou,
    Contrastive,
    Mmn,
    Box,
    Kl,
    GuidedAttention,
    Tubedetr,
}

#[derive(Subcommand)]
enum Command {
    /// Score predictions against groundtruth
    Eval {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        /// Comma-separated vIoU@R thresholds
        #[arg(long, value_delimiter = ',')]
        thresholds: Option<Vec<f64>>,
        #[arg(long, value_enum)]
        comparison: Option<CmpArg>,
        #[arg(long, value_enum)]
        missing: Option<MissingArg>,
        /// Write the full report as JSON
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
        /// Row label in the table
        #[arg(long)]
        method: Option<String>,
    },
    /// Combine one file's segments with another file's boxes
    Fuse {
        #[arg(long)]
        temporal: PathBuf,
        #[arg(long)]
        spatial: PathBuf,
        #[arg(long)]
        policy: Option<GapPolicy>,
        /// Swap the roles of the two files
        #[arg(long)]
        reverse: bool,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Link per-frame detections into tubes
    Link {
        #[arg(long)]
        detections: PathBuf,
        /// Linking parameters (TOML, or JSON by extension)
        #[arg(long)]
        params: Option<PathBuf>,
        /// Keep only the highest-scoring tube of each video
        #[arg(long)]
        best: bool,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Select moments from clip scores
    Moments {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long, value_enum)]
        norm: Option<NormArg>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Evaluate a training loss on a JSON input
    Loss {
        #[arg(long, value_enum)]
        kind: LossKind,
        #[arg(long)]
        input: PathBuf,
    },
    /// Generate a synthetic dataset
    Synth {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Synthesis parameters (TOML, or JSON by extension)
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        videos: Option<usize>,
        #[arg(long)]
        frames: Option<u32>,
        /// Write groundtruth split files instead, e.g. train=100,test=20
        #[arg(long, value_delimiter = ',')]
        splits: Option<Vec<String>>,
    },
    /// Check split record counts against a manifest
    Validate {
        /// Manifest file, or a built-in version (1.0, 2.0, 2.1)
        #[arg(long)]
        manifest: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error[{}]: {:#}", f.category.label(), f.error);
            ExitCode::from(f.category as u8)
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let config = Config::resolve(cli.config.as_deref()).map_err(|e| {
        let category = match e {
            stvg_core::harness::config::ConfigError::Io { .. } => Category::Io,
            stvg_core::harness::config::ConfigError::Parse { .. } => Category::Format,
        };
        Failure {
            category,
            error: e.into(),
        }
    })?;
    match cli.command {
        Command::Eval {
            gt,
            pred,
            thresholds,
            comparison,
            missing,
            report,
            format,
            method,
        } => {
            let mut eval = config.eval;
            if let Some(t) = thresholds {
                eval.thresholds = t;
            }
            if let Some(c) = comparison {
                eval.comparison = match c {
                    CmpArg::Strict => Comparison::Strict,
                    CmpArg::Inclusive => Comparison::Inclusive,
                };
            }
            if let Some(m) = missing {
                eval.missing = match m {
                    MissingArg::Zero => MissingPrediction::ScoreZero,
                    MissingArg::Skip => MissingPrediction::Skip,
                };
            }
            let gts = tubes_of(&load_records(&gt)?, &gt)?;
            let preds = tubes_of(&load_records(&pred)?, &pred)?;
            let r = evaluate_dataset(&preds, &gts, &eval).cat(Category::Validation)?;
            let doc = serde_json::to_string_pretty(&r).cat(Category::Io)?;
            if let Some(path) = report {
                fs::write(&path, format!("{doc}\n"))
                    .with_context(|| format!("writing {}", path.display()))
                    .cat(Category::Io)?;
            }
            let label = method.unwrap_or_else(|| {
                pred.file_stem()
                    .map_or_else(|| "prediction".into(), |s| s.to_string_lossy().into_owned())
            });
            match format {
                Format::Table => print!("{}", r.to_table(&label)),
                Format::Json => println!("{doc}"),
            }
            Ok(())
        }
        Command::Fuse {
            temporal,
            spatial,
            policy,
            reverse,
            output,
        } => {
            let policy = policy.unwrap_or(config.fusion.policy);
            let (temporal, spatial) = if reverse {
                (spatial, temporal)
            } else {
                (temporal, spatial)
            };
            let t_recs = load_records(&temporal)?;
            let s_tubes: BTreeMap<String, Tube> = tubes_of(&load_records(&spatial)?, &spatial)?
                .into_iter()
                .map(|t| (t.video_id.clone(), t))
                .collect();
            let mut out = Vec::with_capacity(t_recs.len());
            for rec in &t_recs {
                let Some(t) = rec.tube() else {
                    return fail(Category::Validation, format!("{}: record has no segment", rec.video_id));
                };
                let Some(s) = s_tubes.get(&rec.video_id) else {
                    return fail(
                        Category::Validation,
                        format!("{}: no record in {}", rec.video_id, spatial.display()),
                    );
                };
                let fused = fuse(&t, s, policy).cat(Category::Compute)?;
                let mut r = GroundingRecord::from_tube(&fused);
                r.extra = rec.extra.clone();
                out.push(r);
            }
            store_records(&out, output.as_deref())
        }
        Command::Link {
            detections,
            params,
            best,
            output,
        } => {
            let params: LinkParams = match params {
                Some(p) => read_document(&p)?,
                None => config.link,
            };
            params.validate().cat(Category::Usage)?;
            let recs = load_records(&detections)?;
            let videos: Vec<(String, Vec<_>)> = recs
                .iter()
                .map(|r| (r.video_id.clone(), r.detections.clone().unwrap_or_default()))
                .collect();
            let mut out = Vec::new();
            for ((video_id, _), res) in videos.iter().zip(link_videos(&videos, &params)) {
                let mut tubes = res
                    .with_context(|| format!("linking {video_id}"))
                    .cat(Category::Validation)?;
                if best {
                    // first tube wins ties, keeping the linker's order
                    let top = tubes
                        .iter()
                        .enumerate()
                        .fold(None, |acc: Option<(usize, f64)>, (i, t)| match acc {
                            Some((_, s)) if s >= t.mean_score => acc,
                            _ => Some((i, t.mean_score)),
                        });
                    tubes = top.map(|(i, _)| vec![tubes.swap_remove(i)]).unwrap_or_default();
                }
                for (k, lt) in tubes.into_iter().enumerate() {
                    let mut r = GroundingRecord::from_tube(&lt.tube);
                    r.extra.insert("tube_index".into(), json!(k));
                    r.extra.insert("mean_score".into(), json!(lt.mean_score));
                    out.push(r);
                }
            }
            store_records(&out, output.as_deref())
        }
        Command::Moments { scores, norm, output } => {
            let norm = match norm {
                Some(NormArg::Sigmoid) => ContrastiveNorm::Sigmoid,
                Some(NormArg::Raw) => ContrastiveNorm::Raw,
                None => config.moments.normalization,
            };
            let recs = load_records(&scores)?;
            let out = recs
                .iter()
                .map(|r| moment_record(r, norm))
                .collect::<CliResult<Vec<_>>>()?;
            store_records(&out, output.as_deref())
        }
        Command::Loss { kind, input } => {
            let text = read_text(&input)?;
            let v: Value = serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", input.display()))
                .cat(Category::Format)?;
            let result = compute_loss(kind, &v, &config)?;
            println!("{}", serde_json::to_string_pretty(&result).cat(Category::Io)?);
            Ok(())
        }
        Command::Synth {
            seed,
            out,
            params,
            videos,
            frames,
            splits,
        } => {
            let mut p: SynthParams = match params {
                Some(path) => read_document(&path)?,
                None => SynthParams::default(),
            };
            if let Some(n) = videos {
                p.n_videos = n;
            }
            if let Some(f) = frames {
                p.frames_per_video = f;
            }
            p.validate().cat(Category::Usage)?;
            match splits {
                Some(pairs) => {
                    let counts = parse_splits(&pairs)?;
                    write_split_files(seed, &counts, &p, &out).cat(Category::Io)
                }
                None => {
                    let d = synth_dataset(seed, &p).cat(Category::Compute)?;
                    d.write_to_dir(&out).cat(Category::Io)
                }
            }
        }
        Command::Validate { manifest, data, format } => {
            let m = load_manifest(&manifest)?;
            let counts = count_split_records(&data).map_err(|e| Failure {
                category: record_category(&e),
                error: anyhow::Error::new(e).context(format!("reading {}", data.display())),
            })?;
            let report = validate_manifest(&m, &counts);
            match format {
                Format::Table => print!("{}", report.to_table()),
                Format::Json => println!("{}", serde_json::to_string_pretty(&report).cat(Category::Io)?),
            }
            io::stdout().flush().cat(Category::Io)?;
            if report.pass {
                Ok(())
            } else {
                fail(
                    Category::Validation,
                    format!("data does not match manifest {}", m.version),
                )
            }
        }
    }
}

fn tubes_of(recs: &[GroundingRecord], path: &Path) -> CliResult<Vec<Tube>> {
    recs.iter()
        .map(|r| {
            r.tube().ok_or_else(|| Failure {
                category: Category::Validation,
                error: anyhow!("{}: {} has no segment", path.display(), r.video_id),
            })
        })
        .collect()
}

fn parse_splits(pairs: &[String]) -> CliResult<BTreeMap<String, u64>> {
    let mut counts = BTreeMap::new();
    for pair in pairs {
        let Some((name, n)) = pair.split_once('=') else {
            return fail(Category::Usage, format!("split {pair:?} is not name=count"));
        };
        let n: u64 = n
            .trim()
            .parse()
            .with_context(|| format!("split {pair:?}"))
            .cat(Category::Usage)?;
        counts.insert(name.trim().to_string(), n);
    }
    Ok(counts)
}

fn load_manifest(arg: &str) -> CliResult<DatasetManifest> {
    let path = Path::new(arg);
    if path.exists() {
        return read_document(path);
    }
    let version = arg.trim_start_matches('v');
    match DatasetManifest::builtin(version) {
        Some(m) => Ok(m),
        None => fail(
            Category::Usage,
            format!(
                "{arg} is neither a file nor a built-in manifest ({})",
                DatasetManifest::BUILTIN_VERSIONS.join(", ")
            ),
        ),
    }
}

/// Picks a moment for one record and maps it back to frames.
fn moment_record(rec: &GroundingRecord, norm: ContrastiveNorm) -> CliResult<GroundingRecord> {
    let id = &rec.video_id;
    let Some(scores) = &rec.scores else {
        return fail(Category::Validation, format!("{id}: record has no scores"));
    };
    let (span, score, rule) = if let Some(map) = scores.moment_map().cat(Category::Validation)? {
        let (span, score) = select_moment(&map, norm).cat(Category::Compute)?;
        (span, score, "moment_map")
    } else if let Some(d) = scores.distributions().cat(Category::Validation)? {
        let out = decode_start_end(&d);
        let rule = match out.rule {
            stvg_core::moments::DecodeRule::Product => "start_end_product",
            stvg_core::moments::DecodeRule::Additive => "start_end_additive",
        };
        (out.span, out.score, rule)
    } else {
        return fail(
            Category::Validation,
            format!("{id}: scores carry neither a moment map nor start/end"),
        );
    };

    let clips = match (scores.clip_length_frames, rec.segment) {
        (Some(len), _) => fixed_length_clips(scores.origin_frame.unwrap_or(0), scores.n_clips, len),
        (None, Some(seg)) => split_into_clips(&seg, scores.n_clips),
        (None, None) => {
            return fail(
                Category::Validation,
                format!("{id}: need clip_length_frames or a segment to map clips to frames"),
            )
        }
    }
    .with_context(|| format!("{id}: clip layout"))
    .cat(Category::Validation)?;
    let segment = span_to_segment(span, &clips)
        .with_context(|| format!("{id}: mapping clips to frames"))
        .cat(Category::Compute)?;

    let boxes: BTreeMap<_, BBox> = rec
        .boxes
        .range(segment.start()..=segment.end())
        .map(|(f, b)| (*f, *b))
        .collect();
    let coverage = if boxes.is_empty() {
        Coverage::Degenerate
    } else if boxes.len() as u64 == segment.frame_count() {
        Coverage::Full
    } else {
        Coverage::Partial
    };
    let tube = Tube {
        video_id: id.clone(),
        query: rec.query.clone(),
        source: Some("moments".into()),
        segment,
        boxes,
        coverage,
        fusion: None,
    };
    let mut out = GroundingRecord::from_tube(&tube);
    out.extra = rec.extra.clone();
    out.extra.insert(
        "moment".into(),
        json!({ "first_clip": span.first_clip, "last_clip": span.last_clip, "score": score, "rule": rule }),
    );
    Ok(out)
}

fn field<T: for<'de> Deserialize<'de>>(v: &Value, name: &str) -> CliResult<T> {
    let Some(x) = v.get(name) else {
        return fail(Category::Format, format!("missing field {name:?}"));
    };
    serde_json::from_value(x.clone())
        .with_context(|| format!("field {name:?}"))
        .cat(Category::Format)
}

/// IoU predictions `p` with targets `y`, or targets built from
/// `n_clips` and `gt_span`.
fn mmn_iou_input(v: &Value) -> CliResult<f64> {
    let p: Vec<f64> = field(v, "p")?;
    let y: Vec<f64> = if v.get("y").is_some() {
        field(v, "y")?
    } else {
        let n: usize = field(v, "n_clips")?;
        let [i, j]: [usize; 2] = field(v, "gt_span")?;
        moment_iou_targets(n, ClipSpan::new(i, j)).cat(Category::Validation)?
    };
    mmn_iou_loss(&p, &y).cat(Category::Validation)
}

fn compute_loss(kind: LossKind, v: &Value, config: &Config) -> CliResult<Value> {
    let w = &config.weights;
    w.validate().cat(Category::Usage)?;
    let contrastive = |v: &Value| -> CliResult<(f64, f64)> {
        let s: SimilarityMatrix = field(v, "similarity")?;
        Ok(contrastive_losses(&s))
    };
    let boxes = |v: &Value| -> CliResult<(f64, f64)> {
        let pred: Vec<BBox> = field(v, "pred_boxes")?;
        let gt: Vec<BBox> = field(v, "gt_boxes")?;
        box_losses(&pred, &gt).cat(Category::Validation)
    };
    let kl = |v: &Value| -> CliResult<f64> {
        let pred: TemporalDistributions = field(v, "pred")?;
        let target: TemporalDistributions = field(v, "target")?;
        kl_temporal_loss(&pred, &target).cat(Category::Validation)
    };
    let attention = |v: &Value| -> CliResult<f64> {
        let row: AttentionRow = field(v, "attention")?;
        guided_attention_loss(&row).cat(Category::Validation)
    };
    Ok(match kind {
        LossKind::MmnIou => json!({ "iou_loss": mmn_iou_input(v)? }),
        LossKind::Contrastive => {
            let (video, sentence) = contrastive(v)?;
            json!({ "video_loss": video, "sentence_loss": sentence })
        }
        LossKind::Mmn => {
            let iou = mmn_iou_input(v)?;
            let (video, sentence) = contrastive(v)?;
            json!({
                "iou_loss": iou,
                "video_loss": video,
                "sentence_loss": sentence,
                "total": mmn_total(iou, video, sentence, w),
            })
        }
        LossKind::Box => {
            let (l1, giou) = boxes(v)?;
            json!({ "l1_loss": l1, "giou_loss": giou })
        }
        LossKind::Kl => json!({ "kl_loss": kl(v)? }),
        LossKind::GuidedAttention => json!({ "attention_loss": attention(v)? }),
        LossKind::Tubedetr => {
            let (l1, giou) = boxes(v)?;
            let k = kl(v)?;
            let a = attention(v)?;
            json!({
                "l1_loss": l1,
                "giou_loss": giou,
                "kl_loss": k,
                "attention_loss": a,
                "total": tubedetr_total(l1, giou, k, a, w),
            })
        }
    })
}
