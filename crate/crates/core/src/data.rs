//! Datasets: synthetic two-Gaussian generator with label noise, a shifted
//! out-of-distribution probe, group-aware splitting and CSV I/O.
//!
//! CSV layout: header `id,group,label,noise_flag,f0,f1,…,f{D−1}`, one sample
//! per line. `group` and `noise_flag` cells may be empty. Floats are written
//! with 17 significant digits so a save/load round trip is exact.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evidential::Label;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: u64,
    pub features: Vec<f64>,
    pub label: Label,
    pub group: Option<u64>,
    /// Set by the synthetic generator: `Some(true)` when the label was flipped.
    pub noise_flag: Option<bool>,
}

impl Sample {
    pub fn is_flipped(&self) -> bool {
        self.noise_flag == Some(true)
    }

    /// Label before any injected flip.
    pub fn clean_label(&self) -> Label {
        if self.is_flipped() {
            self.label.flipped()
        } else {
            self.label
        }
    }
}

/// Where a dataset came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Gaussian(GaussianOverlap),
    OodProbe {
        base: GaussianOverlap,
        offset_sigmas: f64,
        n: usize,
        seed: u64,
    },
    File(String),
    Derived(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub feature_dim: usize,
    pub provenance: Provenance,
}

impl Dataset {
    /// Checks uniform width, finite features and unique ids.
    pub fn new(samples: Vec<Sample>, feature_dim: usize, provenance: Provenance) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for s in &samples {
            if s.features.len() != feature_dim {
                return Err(Error::Dimension {
                    expected: feature_dim,
                    got: s.features.len(),
                });
            }
            if s.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(
                    "features",
                    format!("sample {} has a non-finite feature", s.id),
                ));
            }
            if !seen.insert(s.id) {
                return Err(Error::invalid("id", format!("duplicate sample id {}", s.id)));
            }
        }
        Ok(Self {
            samples,
            feature_dim,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn ids(&self) -> Vec<u64> {
        self.samples.iter().map(|s| s.id).collect()
    }

    pub fn labels(&self) -> Vec<Label> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn count_positive(&self) -> usize {
        self.samples.iter().filter(|s| s.label.is_positive()).count()
    }

    pub fn count_flipped(&self) -> usize {
        self.samples.iter().filter(|s| s.is_flipped()).count()
    }

    pub fn has_both_classes(&self) -> bool {
        let pos = self.count_positive();
        pos > 0 && pos < self.len()
    }

    /// Samples at the given positions, in the given order.
    pub fn subset(&self, indices: &[usize], note: &str) -> Dataset {
        Dataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            feature_dim: self.feature_dim,
            provenance: Provenance::Derived(note.to_string()),
        }
    }

    /// Samples whose id is in `ids`, keeping this dataset's order.
    pub fn retain_ids(&self, ids: &BTreeSet<u64>, note: &str) -> Dataset {
        Dataset {
            samples: self.samples.iter().filter(|s| ids.contains(&s.id)).cloned().collect(),
            feature_dim: self.feature_dim,
            provenance: Provenance::Derived(note.to_string()),
        }
    }

    /// Copy with injected flips undone, like a test set re-read by experts.
    pub fn with_clean_labels(&self) -> Dataset {
        let samples = self
            .samples
            .iter()
            .map(|s| Sample {
                label: s.clean_label(),
                noise_flag: s.noise_flag.map(|_| false),
                ..s.clone()
            })
            .collect();
        Dataset {
            samples,
            feature_dim: self.feature_dim,
            provenance: Provenance::Derived("clean labels".into()),
        }
    }

    pub fn require_nonempty(&self, what: &'static str) -> Result<()> {
        if self.is_empty() {
            Err(Error::Empty(what))
        } else {
            Ok(())
        }
    }
}

/// Two isotropic unit-variance Gaussian clusters whose means lie
/// `separation` apart along the first axis, at `±separation/2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianOverlap {
    pub n: usize,
    pub dim: usize,
    pub separation: f64,
    pub flip_rate: f64,
    #[serde(default = "half")]
    pub positive_fraction: f64,
    /// Consecutive ids share a group of this size; `None` leaves samples ungrouped.
    #[serde(default)]
    pub group_size: Option<usize>,
    pub seed: u64,
}

fn half() -> f64 {
    0.5
}

impl GaussianOverlap {
    pub fn new(n: usize, dim: usize, separation: f64, flip_rate: f64, seed: u64) -> Self {
        Self {
            n,
            dim,
            separation,
            flip_rate,
            positive_fraction: 0.5,
            group_size: None,
            seed,
        }
    }

    fn n_positive(&self) -> usize {
        (self.n as f64 * self.positive_fraction).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::invalid("dim", "must be >= 1"));
        }
        if !(self.separation.is_finite() && self.separation >= 0.0) {
            return Err(Error::invalid("separation", "must be finite and >= 0"));
        }
        if !(0.0..0.5).contains(&self.flip_rate) {
            return Err(Error::invalid(
                "flip_rate",
                format!("{} not in [0, 0.5)", self.flip_rate),
            ));
        }
        if !(self.positive_fraction > 0.0 && self.positive_fraction < 1.0) {
            return Err(Error::invalid("positive_fraction", "must be in (0, 1)"));
        }
        let pos = self.n_positive();
        if pos < 2 || self.n.saturating_sub(pos) < 2 {
            return Err(Error::invalid(
                "n",
                format!("{} samples leave fewer than 2 per class", self.n),
            ));
        }
        if self.group_size == Some(0) {
            return Err(Error::invalid("group_size", "must be >= 1"));
        }
        Ok(())
    }

    /// Cluster mean of the given (true) class.
    pub fn mean(&self, label: Label) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        m[0] = match label {
            Label::Positive => 0.5 * self.separation,
            Label::Negative => -0.5 * self.separation,
        };
        m
    }

    pub fn generate(&self) -> Result<Dataset> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let n_pos = self.n_positive();
        let mut classes: Vec<Label> = (0..self.n).map(|i| Label::from(i < n_pos)).collect();
        classes.shuffle(&mut rng);
        let samples = classes
            .into_iter()
            .enumerate()
            .map(|(i, truth)| {
                let mut features = self.mean(truth);
                for v in &mut features {
                    *v += rng.sample::<f64, _>(StandardNormal);
                }
                let flipped = rng.random::<f64>() < self.flip_rate;
                Sample {
                    id: i as u64,
                    features,
                    label: if flipped { truth.flipped() } else { truth },
                    group: self.group_size.map(|g| (i / g) as u64),
                    noise_flag: Some(flipped),
                }
            })
            .collect();
        Dataset::new(samples, self.dim, Provenance::Gaussian(self.clone()))
    }
}

pub fn gen_gaussian_overlap(n: usize, dim: usize, separation: f64, flip_rate: f64, seed: u64) -> Result<Dataset> {
    GaussianOverlap::new(n, dim, separation, flip_rate, seed).generate()
}

/// Samples from a unit Gaussian centred `offset_sigmas` away from the midpoint
/// of the two training clusters, along the second axis (orthogonal to the
/// class separation; the first axis when `dim == 1`). Labels alternate and
/// carry no meaning.
pub fn gen_ood_probe(base: &Dataset, offset_sigmas: f64, n: usize, seed: u64) -> Result<Dataset> {
    let cfg = match &base.provenance {
        Provenance::Gaussian(cfg) => cfg.clone(),
        _ => {
            return Err(Error::invalid(
                "base",
                "probe needs a dataset from the Gaussian generator",
            ))
        }
    };
    if !offset_sigmas.is_finite() {
        return Err(Error::invalid("offset_sigmas", "must be finite"));
    }
    let axis = if cfg.dim > 1 { 1 } else { 0 };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|i| {
            let mut features: Vec<f64> = (0..cfg.dim).map(|_| rng.sample(StandardNormal)).collect();
            features[axis] += offset_sigmas;
            Sample {
                id: i as u64,
                features,
                label: Label::from(i % 2 == 1),
                group: None,
                noise_flag: None,
            }
        })
        .collect();
    Dataset::new(
        samples,
        cfg.dim,
        Provenance::OodProbe {
            base: cfg,
            offset_sigmas,
            n,
            seed,
        },
    )
}

/// Partition by group (ungrouped samples count as their own group) into
/// train/validation/test so that no group spans two parts. Groups are
/// shuffled with `seed` and assigned until each part reaches its share of
/// samples. A part with fraction 0 comes back empty.
pub fn split_by_group(d: &Dataset, fractions: (f64, f64, f64), seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    let fr = [fractions.0, fractions.1, fractions.2];
    if fr.iter().any(|f| !(f.is_finite() && *f >= 0.0)) || (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(
            "fractions",
            format!("{fr:?} must be nonnegative and sum to 1"),
        ));
    }
    d.require_nonempty("dataset")?;

    let mut groups: BTreeMap<(bool, u64), Vec<usize>> = BTreeMap::new();
    for (i, s) in d.samples.iter().enumerate() {
        let key = match s.group {
            Some(g) => (true, g),
            None => (false, s.id),
        };
        groups.entry(key).or_default().push(i);
    }
    let wanted = fr.iter().filter(|&&f| f > 0.0).count();
    if groups.len() < wanted {
        return Err(Error::TooFewGroups {
            groups: groups.len(),
            splits: wanted,
        });
    }
    let mut units: Vec<Vec<usize>> = groups.into_values().collect();
    units.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let n = d.len() as f64;
    let cut = [fr[0] * n, (fr[0] + fr[1]) * n];
    let mut parts: [Vec<usize>; 3] = Default::default();
    let mut taken = 0usize;
    for unit in units {
        let part = if (taken as f64) < cut[0] - 1e-9 && fr[0] > 0.0 {
            0
        } else if (taken as f64) < cut[1] - 1e-9 && fr[1] > 0.0 {
            1
        } else if fr[2] > 0.0 {
            2
        } else if fr[1] > 0.0 {
            1
        } else {
            0
        };
        taken += unit.len();
        parts[part].extend(unit);
    }
    for (k, p) in parts.iter().enumerate() {
        if fr[k] > 0.0 && p.is_empty() {
            return Err(Error::TooFewGroups {
                groups: parts.iter().filter(|p| !p.is_empty()).count(),
                splits: wanted,
            });
        }
    }
    let [train, val, test] = parts.map(|mut p| {
        p.sort_unstable();
        p
    });
    Ok((
        d.subset(&train, "train split"),
        d.subset(&val, "validation split"),
        d.subset(&test, "test split"),
    ))
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Write `d` in the CSV layout described in the module docs.
pub fn save_csv(d: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mut header = vec!["id".to_string(), "group".into(), "label".into(), "noise_flag".into()];
    header.extend((0..d.feature_dim).map(|k| format!("f{k}")));
    writeln!(out, "{}", header.join(","))?;
    for s in &d.samples {
        let mut row = vec![
            s.id.to_string(),
            s.group.map(|g| g.to_string()).unwrap_or_default(),
            u8::from(s.label).to_string(),
            s.noise_flag.map(|f| u8::from(f).to_string()).unwrap_or_default(),
        ];
        row.extend(s.features.iter().map(|&v| fmt_f64(v)));
        writeln!(out, "{}", row.join(","))?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let parse_err = |line: u64, message: String| Error::Parse {
        path: shown.clone(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)?;
    let mut records = reader.records();
    let header = match records.next() {
        None => return Err(parse_err(1, "empty file".into())),
        Some(r) => r?,
    };

    let mut col_id = None;
    let mut col_label = None;
    let mut col_group = None;
    let mut col_noise = None;
    let mut feature_cols = Vec::new();
    for (k, name) in header.iter().enumerate() {
        match name.trim() {
            "id" => col_id = Some(k),
            "label" => col_label = Some(k),
            "group" => col_group = Some(k),
            "noise_flag" => col_noise = Some(k),
            other => match other.strip_prefix('f').and_then(|n| n.parse::<usize>().ok()) {
                Some(idx) if idx == feature_cols.len() => feature_cols.push(k),
                _ => return Err(parse_err(1, format!("unexpected column `{other}`"))),
            },
        }
    }
    let col_id = col_id.ok_or_else(|| Error::MissingColumn("id".into()))?;
    let col_label = col_label.ok_or_else(|| Error::MissingColumn("label".into()))?;
    if feature_cols.is_empty() {
        return Err(Error::MissingColumn("f0".into()));
    }

    let width = header.len();
    let mut samples = Vec::new();
    for rec in records {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() == 1 && rec[0].trim().is_empty() {
            continue;
        }
        if rec.len() != width {
            return Err(parse_err(line, format!("expected {width} fields, found {}", rec.len())));
        }
        let cell = |k: usize| rec[k].trim();
        let id = cell(col_id)
            .parse::<u64>()
            .map_err(|_| parse_err(line, format!("id `{}` is not a nonnegative integer", cell(col_id))))?;
        let label = match cell(col_label) {
            "0" => Label::Negative,
            "1" => Label::Positive,
            other => return Err(parse_err(line, format!("label `{other}` is not 0 or 1"))),
        };
        let group = match col_group.map(cell) {
            None | Some("") => None,
            Some(g) => Some(
                g.parse::<u64>()
                    .map_err(|_| parse_err(line, format!("group `{g}` is not an integer")))?,
            ),
        };
        let noise_flag = match col_noise.map(cell) {
            None | Some("") => None,
            Some("0") => Some(false),
            Some("1") => Some(true),
            Some(other) => return Err(parse_err(line, format!("noise_flag `{other}` is not 0, 1 or empty"))),
        };
        let features = feature_cols
            .iter()
            .map(|&k| {
                cell(k)
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(line, format!("column f{}: `{}` is not a finite number", k, cell(k))))
            })
            .collect::<Result<Vec<_>>>()?;
        samples.push(Sample {
            id,
            features,
            label,
            group,
            noise_flag,
        });
    }
    if samples.is_empty() {
        return Err(parse_err(2, "no samples after header".into()));
    }
    Dataset::new(samples, feature_cols.len(), Provenance::File(shown.clone()))
}
