//! Command implementations behind the `trajseg` binary. Every path a
//! command touches is resolved against the `--root` directory.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use trajseg_core::config::RunConfig;
use trajseg_core::evaluation::{buckets_table, evaluate_video, length_buckets, MetricReport};
use trajseg_core::formats::{read_ppm, read_rle, write_rle, Mask};
use trajseg_core::gradcheck_suite::{self, SuiteOptions};
use trajseg_core::model::{infer, init_params, Stage, VideoExample};
use trajseg_core::numerics::Tensor;
use trajseg_core::reasoning::{grounding_instruction, Vocabulary};
use trajseg_core::synthetic_data::{
    frame_name, generate_split_sample, load_sample, mask_name, save_sample, uniform_key_frames, Manifest,
    SampleKindTag, Split,
};
use trajseg_core::training::{load_checkpoint, loss_curve_csv, save_checkpoint, Trainer};
use trajseg_core::Error;

pub const THREADS_ENV: &str = "TRAJSEG_THREADS";

/// Options shared by every command.
#[derive(Clone, Debug, Default)]
pub struct Globals {
    pub root: PathBuf,
    pub config: Option<PathBuf>,
    pub threads: Option<usize>,
    pub seed: Option<u64>,
}

impl Globals {
    pub fn path(&self, p: impl AsRef<Path>) -> PathBuf {
        self.root.join(p)
    }

    /// Defaults, then the config file, then `--seed` and `--threads`
    /// (falling back to the environment).
    pub fn load_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(&self.path(p))?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        let env_threads = std::env::var(THREADS_ENV).ok();
        if let Some(t) = self.threads {
            cfg.threads = t;
        } else if let Some(v) = env_threads {
            cfg.threads = v
                .trim()
                .parse()
                .with_context(|| format!("{THREADS_ENV}={v:?} is not a thread count"))?;
        }
        if cfg.threads == 0 {
            bail!("thread count must be at least 1");
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn data_dir(&self, cfg: &RunConfig) -> PathBuf {
        self.path(&cfg.data_dir)
    }

    fn run_dir(&self, cfg: &RunConfig) -> PathBuf {
        self.path(&cfg.run_dir)
    }
}

fn io<T>(r: std::io::Result<T>, path: &Path) -> trajseg_core::Result<T> {
    r.map_err(|e| Error::io(path, e))
}

fn is_nonempty_dir(p: &Path) -> bool {
    fs::read_dir(p).map(|mut d| d.next().is_some()).unwrap_or(false)
}

/// Sample directories under `dir`, sorted by name.
fn sample_dirs(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in io(fs::read_dir(dir), dir)? {
        let entry = io(entry, dir)?;
        let path = entry.path();
        if path.join("manifest.txt").is_file() {
            out.push((entry.file_name().to_string_lossy().into_owned(), path));
        }
    }
    out.sort();
    Ok(out)
}

// ---- gen-data -------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GenSummary {
    pub dir: PathBuf,
    pub counts: Vec<(&'static str, usize)>,
    pub seed: u64,
}

pub fn cmd_gen_data(g: &Globals, force: bool) -> Result<GenSummary> {
    let cfg = g.load_config()?;
    let dir = g.data_dir(&cfg);
    if is_nonempty_dir(&dir) {
        if !force {
            bail!("{} already exists and is not empty; pass --force to replace it", dir.display());
        }
        io(fs::remove_dir_all(&dir), &dir)?;
    }
    io(fs::create_dir_all(&dir), &dir)?;
    let mut counts = Vec::new();
    for split in Split::ALL {
        let n = split.count(&cfg);
        let split_dir = dir.join(split.name());
        io(fs::create_dir_all(&split_dir), &split_dir)?;
        for i in 0..n {
            let sample = generate_split_sample(&cfg, split, i)?;
            let kind = if sample.frames.len() > 1 {
                SampleKindTag::Video
            } else {
                SampleKindTag::Still
            };
            let keys = uniform_key_frames(sample.frames.len(), cfg.t_key);
            save_sample(&split_dir.join(format!("{i:04}")), &sample, kind, keys)?;
        }
        counts.push((split.name(), n));
    }
    cfg.save(&dir.join("config.txt"))?;
    Ok(GenSummary {
        dir,
        counts,
        seed: cfg.seed,
    })
}

// ---- train ----------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub curve: PathBuf,
    pub steps: usize,
    pub final_loss: Option<f64>,
    pub resumed_from: Option<PathBuf>,
}

pub fn load_split(dir: &Path) -> Result<Vec<VideoExample>> {
    if !dir.is_dir() {
        return Err(Error::Config(format!("dataset {} not found; run gen-data first", dir.display())).into());
    }
    let samples = sample_dirs(dir)?;
    if samples.is_empty() {
        return Err(Error::Config(format!("dataset {} holds no samples", dir.display())).into());
    }
    samples
        .iter()
        .map(|(_, p)| {
            let s = load_sample(p)?;
            Ok(VideoExample::from_stored(&s)?)
        })
        .collect()
}

pub fn checkpoint_name(stage: Stage) -> &'static str {
    match stage {
        Stage::One => "stage1.ckpt",
        Stage::Two => "stage2.ckpt",
    }
}

/// Train one stage. Stage 2 starts from `init`, else from the stage-1
/// checkpoint in the run directory when one exists, else from scratch.
pub fn cmd_train(
    g: &Globals,
    stage: Stage,
    init: Option<&Path>,
    mut progress: impl FnMut(&str),
) -> Result<TrainSummary> {
    let cfg = g.load_config()?;
    let vocab = Vocabulary::synthetic();
    let data = g.data_dir(&cfg);
    let (split, steps) = match stage {
        Stage::One => (Split::Stills, cfg.stage1_steps),
        Stage::Two => (Split::Train, cfg.stage2_steps),
    };
    let videos = load_split(&data.join(split.name()))?;
    let run = g.run_dir(&cfg);
    let resume = match (init, stage) {
        (Some(p), _) => Some(g.path(p)),
        (None, Stage::Two) => Some(run.join(checkpoint_name(Stage::One))).filter(|p| p.is_file()),
        (None, Stage::One) => None,
    };
    let params = match &resume {
        Some(p) => {
            if !p.is_file() {
                return Err(Error::Config(format!("checkpoint {} not found", p.display())).into());
            }
            load_checkpoint(p)?
        }
        None => init_params(&cfg, &vocab, cfg.seed),
    };
    io(fs::create_dir_all(&run), &run)?;
    let mut trainer = Trainer::new(&cfg, stage, &vocab, &videos, params)?;
    let mut curve = Vec::with_capacity(steps);
    for _ in 0..steps {
        let r = trainer.step()?;
        if cfg.log_every > 0 && (r.step % cfg.log_every == 0 || r.step == steps) {
            progress(&format!(
                "step {:>5}  total {:.4}  text {:.4}  bce {:.4}  dice {:.4}  cls {:.4}",
                r.step, r.total, r.text, r.bce, r.dice, r.cls
            ));
        }
        curve.push(r);
    }
    let ckpt = run.join(checkpoint_name(stage));
    save_checkpoint(&ckpt, trainer.params())?;
    let csv = run.join(match stage {
        Stage::One => "stage1_loss.csv",
        Stage::Two => "stage2_loss.csv",
    });
    io(fs::write(&csv, loss_curve_csv(&curve)), &csv)?;
    cfg.save(&run.join("config.txt"))?;
    Ok(TrainSummary {
        checkpoint: ckpt,
        curve: csv,
        steps,
        final_loss: curve.last().map(|r| r.total),
        resumed_from: resume,
    })
}

// ---- infer ----------------------------------------------------------------

/// Frames `frame_000.ppm, frame_001.ppm, …` as model inputs.
pub fn read_frames(dir: &Path) -> Result<Vec<Tensor>> {
    let mut out = Vec::new();
    loop {
        let p = dir.join(frame_name(out.len()));
        if !p.is_file() {
            break;
        }
        let f = read_ppm(&p)?;
        out.push(Tensor::matrix(f.height * f.width, 3, f.to_unit())?);
    }
    if out.is_empty() {
        return Err(Error::Input(format!("no frames found in {}", dir.display())).into());
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct InferSummary {
    pub out: PathBuf,
    pub frames: usize,
    pub key_frames: Vec<usize>,
    pub response: String,
    pub present: usize,
}

pub fn presence_csv(presence: &[f64], threshold: f64) -> String {
    let mut s = String::from("frame,score,present\n");
    for (t, &p) in presence.iter().enumerate() {
        s.push_str(&format!("{t},{p:?},{}\n", u8::from(p >= threshold)));
    }
    s
}

/// Segment one video. Without an instruction, the video's manifest
/// description is turned into a grounding prompt.
pub fn cmd_infer(
    g: &Globals,
    checkpoint: &Path,
    video: &Path,
    instruction: Option<&str>,
    kf: Option<usize>,
    out: &Path,
) -> Result<InferSummary> {
    let cfg = g.load_config()?;
    let vocab = Vocabulary::synthetic();
    let ckpt = g.path(checkpoint);
    if !ckpt.is_file() {
        return Err(Error::Config(format!("checkpoint {} not found", ckpt.display())).into());
    }
    let params = load_checkpoint(&ckpt)?;
    let video = g.path(video);
    let pixels = read_frames(&video)?;
    let text = match instruction {
        Some(t) => t.to_string(),
        None => {
            let mpath = video.join("manifest.txt");
            let m = Manifest::parse(&io(fs::read_to_string(&mpath), &mpath)?)?;
            grounding_instruction(&m.description)
        }
    };
    let ids = vocab.tokenize(&text)?;
    let n = kf.unwrap_or(cfg.t_key);
    if n == 0 || n > pixels.len() {
        bail!("--kf must lie in 1..={} for this video, got {n}", pixels.len());
    }
    let keys = uniform_key_frames(pixels.len(), n);
    let result = infer(&params, &cfg, &vocab, &pixels, &ids, &keys)?;
    let out = g.path(out);
    io(fs::create_dir_all(&out), &out)?;
    for (t, m) in result.masks.iter().enumerate() {
        write_rle(&out.join(mask_name(t)), m)?;
    }
    let pcsv = out.join("presence.csv");
    io(fs::write(&pcsv, presence_csv(&result.presence, cfg.presence_threshold)), &pcsv)?;
    let response = vocab.detokenize(&result.response)?;
    let rpath = out.join("response.txt");
    io(fs::write(&rpath, format!("{response}\n")), &rpath)?;
    Ok(InferSummary {
        out,
        frames: pixels.len(),
        present: result.presence.iter().filter(|&&p| p >= cfg.presence_threshold).count(),
        key_frames: keys,
        response,
    })
}

/// Segment every sample of a dataset split into `out/<sample>/`.
pub fn cmd_infer_all(
    g: &Globals,
    checkpoint: &Path,
    split_dir: &Path,
    kf: Option<usize>,
    out: &Path,
) -> Result<Vec<InferSummary>> {
    let dir = g.path(split_dir);
    let samples = sample_dirs(&dir)?;
    if samples.is_empty() {
        return Err(Error::Input(format!("no samples in {}", dir.display())).into());
    }
    samples
        .iter()
        .map(|(name, p)| cmd_infer(g, checkpoint, p, None, kf, &out.join(name)))
        .collect()
}

// ---- eval -----------------------------------------------------------------

/// Masks `mask_000.rle, mask_001.rle, …` in `dir`.
pub fn read_masks(dir: &Path) -> Result<Vec<Mask>> {
    let mut out = Vec::new();
    loop {
        let p = dir.join(mask_name(out.len()));
        if !p.is_file() {
            break;
        }
        out.push(read_rle(&p)?);
    }
    Ok(out)
}

pub const DEFAULT_BUCKET_EDGES: &[usize] = &[1, 8, 16, 32, 64, 1 << 20];

#[derive(Clone, Debug)]
pub struct EvalSummary {
    pub report: MetricReport,
    pub csv: PathBuf,
    pub table: String,
}

/// Score every video in `gt` against the same-named directory in `pred`.
pub fn cmd_eval(g: &Globals, pred: &Path, gt: &Path, out: Option<&Path>) -> Result<EvalSummary> {
    let (pred, gt) = (g.path(pred), g.path(gt));
    let videos = sample_dirs(&gt)?;
    if videos.is_empty() {
        return Err(Error::Input(format!("no ground-truth videos in {}", gt.display())).into());
    }
    let mut reports = Vec::with_capacity(videos.len());
    for (name, gdir) in &videos {
        let gm = read_masks(gdir)?;
        let pdir = pred.join(name);
        if !pdir.is_dir() {
            return Err(Error::Input(format!("video {name}: no predictions at {}", pdir.display())).into());
        }
        let pm = read_masks(&pdir)?;
        if pm.len() != gm.len() {
            return Err(Error::Input(format!(
                "video {name}: {} predicted frames but {} ground-truth frames",
                pm.len(),
                gm.len()
            ))
            .into());
        }
        let r = evaluate_video(name, &pm, &gm).map_err(|e| anyhow::anyhow!("video {name}: {e}"))?;
        reports.push(r);
    }
    let buckets = length_buckets(&reports, DEFAULT_BUCKET_EDGES)?;
    let report = MetricReport::new(reports)?;
    let table = format!("{}\n{}", report.to_table(), buckets_table(&buckets));
    let out = out.map(|o| g.path(o)).unwrap_or(pred);
    io(fs::create_dir_all(&out), &out)?;
    let csv = out.join("report.csv");
    io(fs::write(&csv, report.to_csv()), &csv)?;
    let txt = out.join("report.txt");
    io(fs::write(&txt, &table), &txt)?;
    Ok(EvalSummary { report, csv, table })
}

// ---- gradcheck ------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct GradcheckSummary {
    pub table: String,
    pub checks: usize,
    pub failed: usize,
}

pub fn cmd_gradcheck(module: &str, corrupt: bool) -> Result<GradcheckSummary> {
    let reports = gradcheck_suite::run_module(module, &SuiteOptions { corrupt })?;
    Ok(GradcheckSummary {
        table: gradcheck_suite::report_table(&reports),
        checks: reports.len(),
        failed: reports.iter().filter(|r| !r.pass).count(),
    })
}
