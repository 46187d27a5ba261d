//! The four subcommands. Each reads what earlier stages wrote under the
//! output directory and writes plain CSV/JSON with no timestamps, so a rerun
//! with the same config and seed reproduces every byte.
//!
//! ```text
//! <out>/data/{train,val,test}.csv, ood.csv, provenance.json
//! <out>/model/manifest.json, member_{k}.json, member_{k}_history.csv
//! <out>/model/baseline/...                    (sigmoid model, same layout)
//! <out>/eval/coverage.{csv,json}, predictions.csv, uncertainty_by_noise.csv,
//!            uncertainty_histogram.csv, ood_uncertainty.csv,
//!            baseline_sweep.csv, baseline_matched.csv
//! <out>/bootstrap/report.csv, plan_eps_{ε}.json, eps_{ε}/...
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use beta_evidence::data::{gen_ood_probe, load_csv, save_csv, split_by_group, Dataset};
use beta_evidence::metrics::{f1_scores, roc_auc, ScoredSet};
use beta_evidence::net::{Head, ModelParams, NetworkSpec};
use beta_evidence::selection::{
    bootstrap_from_base, coverage_curve, delta_for_coverage, reject_by_probability_interval, reject_by_uncertainty,
    BootstrapOutcome,
};
use beta_evidence::train::{score_dataset, train_model, TrainedModel};
use log::info;
use serde::{Deserialize, Serialize};

use crate::config::{DataSource, ExperimentConfig, TrainSection};
use crate::error::CliError;
use crate::stats::{histogram, Summary};

pub const MANIFEST_FORMAT: &str = "beta-evidence-manifest";
pub const MANIFEST_VERSION: u32 = 1;

/// Seed offset of the out-of-distribution probe relative to the master seed.
const OOD_SEED_OFFSET: u64 = 0x00D_5EED;

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn model(&self) -> PathBuf {
        self.root.join("model")
    }

    pub fn baseline(&self) -> PathBuf {
        self.model().join("baseline")
    }

    pub fn eval(&self) -> PathBuf {
        self.root.join("eval")
    }

    pub fn bootstrap(&self) -> PathBuf {
        self.root.join("bootstrap")
    }
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| CliError::io(p, e))
}

fn write_text(p: &Path, text: &str) -> Result<()> {
    fs::write(p, text).map_err(|e| CliError::io(p, e))?;
    info!("wrote {}", p.display());
    Ok(())
}

fn write_json<T: Serialize>(p: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(beta_evidence::Error::from)?;
    text.push('\n');
    write_text(p, &text)
}

fn read_dataset(p: &Path) -> Result<Dataset> {
    if !p.is_file() {
        return Err(CliError::Io {
            path: p.display().to_string(),
            message: "missing data file (run `betaev gen` or set data.source = files)".into(),
        });
    }
    Ok(load_csv(p)?)
}

/// The train/validation/test splits (and the probe, when present) a command
/// should read.
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub ood: Option<Dataset>,
}

fn split_paths(cfg: &ExperimentConfig, layout: &Layout) -> [Option<PathBuf>; 4] {
    match cfg.data.source {
        DataSource::Gaussian => {
            let d = layout.data();
            let ood = d.join("ood.csv");
            [
                Some(d.join("train.csv")),
                Some(d.join("val.csv")),
                Some(d.join("test.csv")),
                ood.is_file().then_some(ood),
            ]
        }
        DataSource::Files => [
            cfg.data.train_file.clone(),
            cfg.data.val_file.clone(),
            cfg.data.test_file.clone(),
            cfg.data.ood_file.clone(),
        ],
    }
}

pub fn load_splits(cfg: &ExperimentConfig, layout: &Layout, need_test: bool) -> Result<Splits> {
    let [train, val, test, ood] = split_paths(cfg, layout);
    let train = read_dataset(&train.expect("validated"))?;
    let val = read_dataset(&val.expect("validated"))?;
    let test = if need_test {
        read_dataset(&test.expect("validated"))?
    } else {
        train.subset(&[], "unused")
    };
    let ood = ood.map(|p| read_dataset(&p)).transpose()?;
    Ok(Splits { train, val, test, ood })
}

#[derive(Serialize)]
struct SplitInfo {
    file: String,
    n: usize,
    positives: usize,
    flipped: usize,
}

impl SplitInfo {
    fn new(file: &str, d: &Dataset) -> Self {
        Self {
            file: file.to_string(),
            n: d.len(),
            positives: d.count_positive(),
            flipped: d.count_flipped(),
        }
    }
}

#[derive(Serialize)]
struct GenProvenance {
    seed: u64,
    generator: beta_evidence::data::GaussianOverlap,
    fractions: [f64; 3],
    clean_test_labels: bool,
    splits: Vec<SplitInfo>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ood: Option<beta_evidence::data::Provenance>,
}

/// Draw the configured Gaussian data and split it exactly as `betaev gen`
/// does: generator and split both seeded by `cfg.seed`.
pub fn generate(cfg: &ExperimentConfig) -> Result<Splits> {
    if cfg.data.source != DataSource::Gaussian {
        return Err(CliError::config("data.source", "gen needs data.source = gaussian"));
    }
    let full = cfg.data.generator(cfg.seed).generate()?;
    let f = cfg.data.fractions;
    let (train, val, mut test) = split_by_group(&full, (f[0], f[1], f[2]), cfg.seed)?;
    if cfg.data.clean_test_labels {
        test = test.with_clean_labels();
    }
    let ood = if cfg.data.ood_n > 0 {
        let seed = cfg.seed.wrapping_add(OOD_SEED_OFFSET);
        Some(gen_ood_probe(&full, cfg.data.ood_offset_sigmas, cfg.data.ood_n, seed)?)
    } else {
        None
    };
    Ok(Splits { train, val, test, ood })
}

pub fn cmd_gen(cfg: &ExperimentConfig) -> Result<()> {
    let splits = generate(cfg)?;
    let layout = Layout::new(cfg.output_root());
    let dir = layout.data();
    create_dir(&dir)?;

    let mut infos = Vec::new();
    for (name, d) in [
        ("train.csv", &splits.train),
        ("val.csv", &splits.val),
        ("test.csv", &splits.test),
    ] {
        save_csv(d, dir.join(name))?;
        info!("wrote {} ({} samples)", dir.join(name).display(), d.len());
        infos.push(SplitInfo::new(name, d));
    }
    let ood_path = dir.join("ood.csv");
    match &splits.ood {
        Some(probe) => {
            save_csv(probe, &ood_path)?;
            infos.push(SplitInfo::new("ood.csv", probe));
        }
        None if ood_path.is_file() => fs::remove_file(&ood_path).map_err(|e| CliError::io(&ood_path, e))?,
        None => {}
    }
    write_json(
        &dir.join("provenance.json"),
        &GenProvenance {
            seed: cfg.seed,
            generator: cfg.data.generator(cfg.seed),
            fractions: cfg.data.fractions,
            clean_test_labels: cfg.data.clean_test_labels,
            splits: infos,
            ood: splits.ood.map(|p| p.provenance),
        },
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberEntry {
    pub checkpoint: String,
    pub history: String,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub n_train: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub spec: NetworkSpec,
    pub train: TrainSection,
    pub members: Vec<MemberEntry>,
}

pub fn save_model(dir: &Path, model: &TrainedModel, seed: u64, train: &TrainSection) -> Result<()> {
    create_dir(dir)?;
    let mut members = Vec::new();
    for (k, member) in model.members.iter().enumerate() {
        let checkpoint = format!("member_{k}.json");
        let history = format!("member_{k}_history.csv");
        member.save(dir.join(&checkpoint))?;
        let h = model.histories.get(k).cloned().unwrap_or_default();
        write_text(&dir.join(&history), &h.to_csv())?;
        members.push(MemberEntry {
            checkpoint,
            history,
            best_epoch: h.best_epoch,
            epochs_run: h.records.len(),
            n_train: model.member_ids.get(k).map_or(0, Vec::len),
        });
    }
    write_json(
        &dir.join("manifest.json"),
        &Manifest {
            format: MANIFEST_FORMAT.into(),
            version: MANIFEST_VERSION,
            seed,
            spec: model.spec.clone(),
            train: train.clone(),
            members,
        },
    )
}

pub fn load_model(dir: &Path) -> Result<TrainedModel> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, format!("{e} (run `betaev train` first)")))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| CliError::io(&path, e))?;
    if manifest.format != MANIFEST_FORMAT || manifest.version != MANIFEST_VERSION {
        return Err(CliError::io(
            &path,
            format!("unsupported manifest {} v{}", manifest.format, manifest.version),
        ));
    }
    let members = manifest
        .members
        .iter()
        .map(|m| ModelParams::load(dir.join(&m.checkpoint)))
        .collect::<beta_evidence::Result<Vec<_>>>()?;
    Ok(TrainedModel::from_members(members)?)
}

pub fn cmd_train(cfg: &ExperimentConfig) -> Result<()> {
    let layout = Layout::new(cfg.output_root());
    let splits = load_splits(cfg, &layout, false)?;
    let tcfg = cfg.train.config(cfg.seed)?;
    let dim = splits.train.feature_dim;

    let spec = cfg.model.spec(dim, Head::Evidential);
    info!(
        "training {} evidential member(s) on {} samples",
        tcfg.ensemble_m,
        splits.train.len()
    );
    let model = train_model(&splits.train, &splits.val, &spec, &tcfg)?;
    save_model(&layout.model(), &model, cfg.seed, &cfg.train)?;

    let baseline_dir = layout.baseline();
    if cfg.baseline.enabled {
        let spec = cfg.model.spec(dim, Head::Sigmoid);
        info!("training sigmoid baseline");
        let baseline = train_model(&splits.train, &splits.val, &spec, &tcfg)?;
        save_model(&baseline_dir, &baseline, cfg.seed, &cfg.train)?;
    } else if baseline_dir.is_dir() {
        fs::remove_dir_all(&baseline_dir).map_err(|e| CliError::io(&baseline_dir, e))?;
    }
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn auc_or_none(s: &ScoredSet) -> Option<f64> {
    roc_auc(s).ok()
}

fn noise_cell(flag: Option<bool>) -> &'static str {
    match flag {
        Some(true) => "1",
        Some(false) => "0",
        None => "",
    }
}

fn predictions_csv(d: &Dataset, s: &ScoredSet) -> String {
    let mut out = String::from("id,label,noise_flag,prob_pos,uncertainty\n");
    for (sample, (p, u)) in d.samples.iter().zip(s.scores.iter().zip(&s.uncertainties)) {
        let _ = writeln!(
            out,
            "{},{},{},{p},{u}",
            sample.id,
            u8::from(sample.label),
            noise_cell(sample.noise_flag)
        );
    }
    out
}

/// Uncertainty summaries of flipped and clean samples in each split.
fn noise_tables(splits: &[(&str, &Dataset, &ScoredSet)], bins: usize) -> (String, String) {
    let mut summary = String::from("split,group,n,mean,q25,median,q75\n");
    let mut hist = String::from("split,group,bin_lo,bin_hi,count\n");
    for &(name, d, s) in splits {
        for (group, flipped) in [("flipped", true), ("clean", false)] {
            let u: Vec<f64> = d
                .samples
                .iter()
                .zip(&s.uncertainties)
                .filter(|(smp, _)| smp.noise_flag.is_some() && smp.is_flipped() == flipped)
                .map(|(_, &u)| u)
                .collect();
            let Some(sm) = Summary::of(&u) else { continue };
            let _ = writeln!(
                summary,
                "{name},{group},{},{},{},{},{}",
                sm.n, sm.mean, sm.q25, sm.median, sm.q75
            );
            for (lo, hi, count) in histogram(&u, bins, 0.0, 1.0) {
                let _ = writeln!(hist, "{name},{group},{lo},{hi},{count}");
            }
        }
    }
    (summary, hist)
}

pub fn cmd_eval(cfg: &ExperimentConfig, checkpoint: Option<&Path>) -> Result<()> {
    let layout = Layout::new(cfg.output_root());
    let model_dir = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| layout.model());
    let model = load_model(&model_dir)?;
    let splits = load_splits(cfg, &layout, true)?;
    let dir = layout.eval();
    create_dir(&dir)?;

    let test = score_dataset(&model, &splits.test)?;
    let report = coverage_curve(&test, &cfg.eval.coverages, cfg.eval.threshold)?;
    write_text(&dir.join("coverage.csv"), &report.to_csv())?;
    write_json(&dir.join("coverage.json"), &report)?;
    write_text(&dir.join("predictions.csv"), &predictions_csv(&splits.test, &test))?;

    let train = score_dataset(&model, &splits.train)?;
    let (summary, hist) = noise_tables(
        &[("train", &splits.train, &train), ("test", &splits.test, &test)],
        cfg.eval.histogram_bins,
    );
    write_text(&dir.join("uncertainty_by_noise.csv"), &summary)?;
    write_text(&dir.join("uncertainty_histogram.csv"), &hist)?;

    if let Some(ood) = &splits.ood {
        let probe = score_dataset(&model, ood)?;
        let mut out = String::from("set,n,mean,q25,median,q75\n");
        for (name, s) in [("in_distribution", &test), ("shifted", &probe)] {
            let sm = Summary::of(&s.uncertainties).expect("nonempty scored set");
            let _ = writeln!(out, "{name},{},{},{},{},{}", sm.n, sm.mean, sm.q25, sm.median, sm.q75);
        }
        write_text(&dir.join("ood_uncertainty.csv"), &out)?;
    }

    let baseline_dir = model_dir.join("baseline");
    if baseline_dir.join("manifest.json").is_file() {
        let baseline = load_model(&baseline_dir)?;
        let b = score_dataset(&baseline, &splits.test)?;
        let mut sweep = String::from("delta,realized_coverage,n_kept,auc,f1_pos,f1_neg,micro_f1\n");
        for &delta in &cfg.eval.deltas {
            let r = reject_by_probability_interval(&b, delta)?;
            match r.kept_set(&b) {
                Ok(kept) => {
                    let f = f1_scores(&kept, cfg.eval.threshold);
                    let _ = writeln!(
                        sweep,
                        "{delta},{},{},{},{},{},{}",
                        r.realized_coverage,
                        kept.len(),
                        opt(auc_or_none(&kept)),
                        f.f1_pos,
                        f.f1_neg,
                        f.micro
                    );
                }
                Err(_) => {
                    let _ = writeln!(sweep, "{delta},0,0,,,,");
                }
            }
        }
        write_text(&dir.join("baseline_sweep.csv"), &sweep)?;

        let mut matched = String::from(
            "coverage,evidential_n_kept,evidential_micro_f1,baseline_delta,baseline_realized_coverage,baseline_micro_f1\n",
        );
        for &c in &report.rows.iter().map(|r| r.coverage).collect::<Vec<_>>() {
            let ev = reject_by_uncertainty(&test, c)?;
            let ev_f1 = f1_scores(&ev.kept_set(&test)?, cfg.eval.threshold).micro;
            let delta = delta_for_coverage(&b, c)?;
            let br = reject_by_probability_interval(&b, delta)?;
            let b_f1 = br.kept_set(&b).map(|k| f1_scores(&k, cfg.eval.threshold).micro).ok();
            let _ = writeln!(
                matched,
                "{c},{},{ev_f1},{delta},{},{}",
                ev.kept.len(),
                br.realized_coverage,
                opt(b_f1)
            );
        }
        write_text(&dir.join("baseline_matched.csv"), &matched)?;
    }
    Ok(())
}

fn eps_tag(eps: f64) -> String {
    format!("{eps:.4}")
}

fn bootstrap_report(out: &BootstrapOutcome, train: &Dataset, test: &Dataset) -> Result<String> {
    let rows = out.evaluate(test)?;
    let prevalence = train.count_flipped() as f64 / train.len() as f64;
    let flipped: std::collections::BTreeSet<u64> =
        train.samples.iter().filter(|s| s.is_flipped()).map(|s| s.id).collect();
    let mut csv = String::from("epsilon,n_train,n_dropped,dropped_flipped,flip_ratio,auc,f1_pos,f1_neg\n");
    for (row, run) in rows.iter().zip(&out.runs) {
        let (n_dropped, hit) = match &run.plan {
            Some(p) => (
                p.dropped_ids.len(),
                p.dropped_ids.iter().filter(|id| flipped.contains(id)).count(),
            ),
            None => (0, 0),
        };
        let ratio = (n_dropped > 0 && prevalence > 0.0).then(|| hit as f64 / n_dropped as f64 / prevalence);
        let _ = writeln!(
            csv,
            "{},{},{n_dropped},{hit},{},{},{},{}",
            row.epsilon,
            row.n_train,
            opt(ratio),
            row.auc,
            row.f1_pos,
            row.f1_neg
        );
    }
    Ok(csv)
}

pub fn cmd_bootstrap(cfg: &ExperimentConfig, checkpoint: Option<&Path>) -> Result<()> {
    let layout = Layout::new(cfg.output_root());
    let model_dir = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| layout.model());
    let base = load_model(&model_dir)?;
    let splits = load_splits(cfg, &layout, true)?;
    let tcfg = cfg.train.config(cfg.seed)?;

    let mut epsilons = vec![0.0];
    epsilons.extend(cfg.bootstrap.epsilons.iter().copied().filter(|&e| e > 0.0));
    info!("bootstrapping at epsilons {:?}", &epsilons[1..]);
    let out = bootstrap_from_base(
        base,
        &splits.train,
        &splits.val,
        &tcfg,
        &epsilons,
        cfg.bootstrap.source(),
    )?;

    let dir = layout.bootstrap();
    create_dir(&dir)?;
    write_text(
        &dir.join("report.csv"),
        &bootstrap_report(&out, &splits.train, &splits.test)?,
    )?;
    for run in &out.runs {
        if let Some(plan) = &run.plan {
            let tag = eps_tag(run.epsilon);
            write_json(&dir.join(format!("plan_eps_{tag}.json")), plan)?;
            save_model(&dir.join(format!("eps_{tag}")), &run.model, cfg.seed, &cfg.train)?;
        }
    }
    Ok(())
}
