//! Flat key=value run configuration. Parsing is strict: unknown keys,
//! duplicate keys, and malformed values are rejected with the offending key
//! named. The canonical echo re-parses to an equal config, so archived
//! configs reproduce their runs.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::trainer::{TrainerConfig, TrainerKind};

/// Where one overlay source comes from: the bundled procedural glyphs or a
/// pair of IDX files on disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SourceSpec {
    Glyphs,
    Idx { images: PathBuf, labels: PathBuf },
}

/// What the run trains on.
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    Overlay {
        source_a: SourceSpec,
        source_b: SourceSpec,
        train: usize,
        val: usize,
        test: usize,
        /// Images per class when a source is the bundled glyph set.
        glyphs_per_class: usize,
    },
    /// Analytic quadratic tasks: per-task curvatures, all optima at the
    /// origin, shared parameters starting at `theta0`. One training step per
    /// epoch, no evaluation splits.
    Quadratic {
        curvatures: Vec<f64>,
        theta0: Vec<f64>,
    },
}

/// Everything a run needs, parsed from flat key=value text.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub trainer: TrainerConfig,
    pub epochs: usize,
    pub patience: usize,
    pub dataset: DatasetSpec,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = HashMap::new();
        for (number, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected key=value, got {line:?}",
                    number + 1
                )));
            };
            let (key, value) = (key.trim().to_string(), value.trim().to_string());
            if map.insert(key.clone(), value).is_some() {
                return Err(Error::Config(format!("duplicate key {key:?}")));
            }
        }
        Self::from_map(map)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn from_map(mut map: HashMap<String, String>) -> Result<Self> {
        let mut take = |key: &str| map.remove(key);
        let trainer_kind: TrainerKind = match take("trainer") {
            Some(v) => v.parse()?,
            None => return Err(Error::Config("missing key 'trainer'".to_string())),
        };
        let mut trainer = TrainerConfig::new(trainer_kind);
        if let Some(v) = take("inner_lr") {
            trainer.inner_lr = parse_f64("inner_lr", &v)?;
        }
        if let Some(v) = take("outer_lr") {
            trainer.outer_lr = parse_f64("outer_lr", &v)?;
        }
        trainer.head_lr = match take("head_lr") {
            Some(v) => parse_f64("head_lr", &v)?,
            // The reference protocol drives every parameter group at one
            // rate; an unset head rate follows the inner one.
            None => trainer.inner_lr,
        };
        if let Some(v) = take("loss_weights") {
            trainer.loss_weights = Some(parse_f64_list("loss_weights", &v)?);
        }
        if let Some(v) = take("batch_size") {
            trainer.batch_size = parse_usize("batch_size", &v)?;
        }
        if let Some(v) = take("seed") {
            trainer.seed = parse_u64("seed", &v)?;
        }
        let epochs = match take("epochs") {
            Some(v) => parse_usize("epochs", &v)?,
            None => 100,
        };
        let patience = match take("patience") {
            Some(v) => parse_usize("patience", &v)?,
            None => 10,
        };
        let dataset_kind = take("dataset").unwrap_or_else(|| "overlay".to_string());
        let dataset = match dataset_kind.as_str() {
            "overlay" => {
                let source =
                    |name: &str, map: &mut HashMap<String, String>| -> Result<SourceSpec> {
                        let images = map.remove(&format!("{name}_images"));
                        let labels = map.remove(&format!("{name}_labels"));
                        match (images, labels) {
                            (None, None) => Ok(SourceSpec::Glyphs),
                            (Some(i), Some(l)) => Ok(SourceSpec::Idx {
                                images: PathBuf::from(i),
                                labels: PathBuf::from(l),
                            }),
                            _ => Err(Error::Config(format!(
                                "{name}_images and {name}_labels must be given together"
                            ))),
                        }
                    };
                let source_a = source("source_a", &mut map)?;
                let source_b = source("source_b", &mut map)?;
                let mut take = |key: &str| map.remove(key);
                DatasetSpec::Overlay {
                    source_a,
                    source_b,
                    train: match take("train_size") {
                        Some(v) => parse_usize("train_size", &v)?,
                        None => 2000,
                    },
                    val: match take("val_size") {
                        Some(v) => parse_usize("val_size", &v)?,
                        None => 200,
                    },
                    test: match take("test_size") {
                        Some(v) => parse_usize("test_size", &v)?,
                        None => 200,
                    },
                    glyphs_per_class: match take("glyphs_per_class") {
                        Some(v) => parse_usize("glyphs_per_class", &v)?,
                        None => 200,
                    },
                }
            }
            "quadratic" => {
                let mut take = |key: &str| map.remove(key);
                let curvatures = match take("curvatures") {
                    Some(v) => parse_f64_list("curvatures", &v)?,
                    None => {
                        return Err(Error::Config(
                            "quadratic datasets need 'curvatures'".to_string(),
                        ))
                    }
                };
                let theta0 = match take("theta0") {
                    Some(v) => parse_f64_list("theta0", &v)?,
                    None => vec![1.0],
                };
                DatasetSpec::Quadratic { curvatures, theta0 }
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown dataset {other:?}; expected overlay or quadratic"
                )))
            }
        };
        if let Some(key) = map.keys().next() {
            let hint = if matches!(dataset, DatasetSpec::Quadratic { .. })
                && OVERLAY_KEYS.contains(&key.as_str())
            {
                " (this key applies to overlay datasets)"
            } else if matches!(dataset, DatasetSpec::Overlay { .. })
                && QUADRATIC_KEYS.contains(&key.as_str())
            {
                " (this key applies to quadratic datasets)"
            } else {
                ""
            };
            return Err(Error::Config(format!("unknown key {key:?}{hint}")));
        }
        let config = Self {
            trainer,
            epochs,
            patience,
            dataset,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.trainer.validate(self.task_count())?;
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".to_string()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be positive".to_string()));
        }
        match &self.dataset {
            DatasetSpec::Overlay {
                train,
                val,
                test,
                glyphs_per_class,
                source_a,
                source_b,
            } => {
                for (name, n) in [
                    ("train_size", train),
                    ("val_size", val),
                    ("test_size", test),
                ] {
                    if *n == 0 {
                        return Err(Error::Config(format!("{name} must be positive")));
                    }
                }
                let uses_glyphs =
                    *source_a == SourceSpec::Glyphs || *source_b == SourceSpec::Glyphs;
                if uses_glyphs && *glyphs_per_class == 0 {
                    return Err(Error::Config(
                        "glyphs_per_class must be positive".to_string(),
                    ));
                }
            }
            DatasetSpec::Quadratic { curvatures, theta0 } => {
                if curvatures.is_empty() {
                    return Err(Error::Config("curvatures must be nonempty".to_string()));
                }
                if let Some(bad) = curvatures.iter().find(|c| !c.is_finite() || **c <= 0.0) {
                    return Err(Error::Config(format!(
                        "curvatures must be positive and finite, got {bad}"
                    )));
                }
                if theta0.is_empty() || theta0.iter().any(|t| !t.is_finite()) {
                    return Err(Error::Config(
                        "theta0 must be a nonempty list of finite numbers".to_string(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// How many tasks the configured dataset provides.
    pub fn task_count(&self) -> usize {
        match &self.dataset {
            DatasetSpec::Overlay { .. } => 2,
            DatasetSpec::Quadratic { curvatures, .. } => curvatures.len(),
        }
    }

    /// Canonical text form: fixed key order, optional keys emitted only when
    /// set. `parse(to_text(c)) == c` for every valid config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("trainer", self.trainer.kind.to_string());
        kv("inner_lr", self.trainer.inner_lr.to_string());
        kv("outer_lr", self.trainer.outer_lr.to_string());
        kv("head_lr", self.trainer.head_lr.to_string());
        if let Some(w) = &self.trainer.loss_weights {
            kv("loss_weights", join(w));
        }
        kv("batch_size", self.trainer.batch_size.to_string());
        kv("seed", self.trainer.seed.to_string());
        kv("epochs", self.epochs.to_string());
        kv("patience", self.patience.to_string());
        match &self.dataset {
            DatasetSpec::Overlay {
                source_a,
                source_b,
                train,
                val,
                test,
                glyphs_per_class,
            } => {
                kv("dataset", "overlay".to_string());
                for (name, spec) in [("source_a", source_a), ("source_b", source_b)] {
                    if let SourceSpec::Idx { images, labels } = spec {
                        kv(&format!("{name}_images"), images.display().to_string());
                        kv(&format!("{name}_labels"), labels.display().to_string());
                    }
                }
                kv("train_size", train.to_string());
                kv("val_size", val.to_string());
                kv("test_size", test.to_string());
                kv("glyphs_per_class", glyphs_per_class.to_string());
            }
            DatasetSpec::Quadratic { curvatures, theta0 } => {
                kv("dataset", "quadratic".to_string());
                kv("curvatures", join(curvatures));
                kv("theta0", join(theta0));
            }
        }
        out
    }
}

const OVERLAY_KEYS: [&str; 8] = [
    "train_size",
    "val_size",
    "test_size",
    "glyphs_per_class",
    "source_a_images",
    "source_a_labels",
    "source_b_images",
    "source_b_labels",
];
const QUADRATIC_KEYS: [&str; 2] = ["curvatures", "theta0"];

fn join(values: &[f64]) -> String {
    values
        .iter()
        .map(f64::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_f64(key: &str, value: &str) -> Result<f64> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("key {key:?}: expected a number, got {value:?}")))
}

fn parse_f64_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value.split(',').map(|v| parse_f64(key, v.trim())).collect()
}

fn parse_usize(key: &str, value: &str) -> Result<usize> {
    value.parse().map_err(|_| {
        Error::Config(format!(
            "key {key:?}: expected a nonnegative integer, got {value:?}"
        ))
    })
}

fn parse_u64(key: &str, value: &str) -> Result<u64> {
    value.parse().map_err(|_| {
        Error::Config(format!(
            "key {key:?}: expected a nonnegative integer, got {value:?}"
        ))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> &'static str {
        "trainer = single-step\n"
    }

    #[test]
    fn defaults_fill_unset_keys() {
        let c = RunConfig::parse(minimal()).unwrap();
        assert_eq!(c.trainer.kind, TrainerKind::SingleStep);
        assert_eq!(c.trainer.inner_lr, 0.001);
        assert_eq!(c.trainer.head_lr, 0.001);
        assert_eq!(c.trainer.batch_size, 256);
        assert_eq!(c.epochs, 100);
        assert_eq!(c.patience, 10);
        match &c.dataset {
            DatasetSpec::Overlay {
                source_a, train, ..
            } => {
                assert_eq!(*source_a, SourceSpec::Glyphs);
                assert_eq!(*train, 2000);
            }
            other => panic!("expected overlay default, got {other:?}"),
        }
    }

    #[test]
    fn head_rate_follows_the_inner_rate_when_unset() {
        let c = RunConfig::parse("trainer = single-step\ninner_lr = 0.05\n").unwrap();
        assert_eq!(c.trainer.head_lr, 0.05);
        let c =
            RunConfig::parse("trainer = single-step\ninner_lr = 0.05\nhead_lr = 0.01\n").unwrap();
        assert_eq!(c.trainer.head_lr, 0.01);
    }

    #[test]
    fn echo_round_trips_for_every_shape() {
        let configs = [
            "trainer = single-step\nseed = 9\ntrain_size = 500\n",
            "trainer = fixed-weight\nloss_weights = 1,2.5\nbatch_size = 32\n",
            "trainer = ordinary\ndataset = overlay\nsource_a_images = /tmp/a.idx\nsource_a_labels = /tmp/al.idx\n",
            "trainer = split-only\ndataset = quadratic\ncurvatures = 4,1\ntheta0 = 1,0.5\n",
        ];
        for text in configs {
            let parsed = RunConfig::parse(text).unwrap();
            let echoed = RunConfig::parse(&parsed.to_text()).unwrap();
            assert_eq!(parsed, echoed, "echo drifted for {text:?}");
        }
    }

    #[test]
    fn comments_blanks_and_spacing_are_tolerated() {
        let c = RunConfig::parse("# a run\n\n  trainer =  ordinary  \n\n# end\n").unwrap();
        assert_eq!(c.trainer.kind, TrainerKind::Ordinary);
    }

    #[test]
    fn unknown_and_duplicate_keys_are_rejected() {
        let err = RunConfig::parse("trainer = ordinary\nlerning_rate = 1\n").unwrap_err();
        assert!(err.to_string().contains("unknown key"), "{err}");
        let err = RunConfig::parse("trainer = ordinary\ntrainer = ordinary\n").unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
        let err = RunConfig::parse("trainer ordinary\n").unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
    }

    #[test]
    fn values_are_typed() {
        let err = RunConfig::parse("trainer = ordinary\ninner_lr = fast\n").unwrap_err();
        assert!(err.to_string().contains("inner_lr"), "{err}");
        let err = RunConfig::parse("trainer = ordinary\nbatch_size = -3\n").unwrap_err();
        assert!(err.to_string().contains("batch_size"), "{err}");
        let err = RunConfig::parse("trainer = warp\n").unwrap_err();
        assert!(err.to_string().contains("unknown trainer"), "{err}");
    }

    #[test]
    fn dataset_keys_must_match_the_dataset() {
        let err = RunConfig::parse(
            "trainer = ordinary\ndataset = quadratic\ncurvatures = 1\ntrain_size = 5\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("overlay datasets"), "{err}");
        let err = RunConfig::parse("trainer = ordinary\ncurvatures = 1\n").unwrap_err();
        assert!(err.to_string().contains("quadratic datasets"), "{err}");
        let err = RunConfig::parse("trainer = ordinary\nsource_a_images = /tmp/a\n").unwrap_err();
        assert!(err.to_string().contains("together"), "{err}");
    }

    #[test]
    fn validation_rejects_bad_combinations() {
        // Trainer-level checks run against the dataset's task count.
        let err = RunConfig::parse("trainer = fixed-weight\n").unwrap_err();
        assert!(err.to_string().contains("weights"), "{err}");
        let err =
            RunConfig::parse("trainer = fixed-weight\nloss_weights = 1,2,3\ndataset = overlay\n")
                .unwrap_err();
        assert!(err.to_string().contains("2 tasks"), "{err}");
        let err = RunConfig::parse("trainer = ordinary\nepochs = 0\n").unwrap_err();
        assert!(err.to_string().contains("epochs"), "{err}");
        let err = RunConfig::parse("trainer = ordinary\ntrain_size = 0\n").unwrap_err();
        assert!(err.to_string().contains("train_size"), "{err}");
        let err = RunConfig::parse("trainer = ordinary\ndataset = quadratic\ncurvatures = -1\n")
            .unwrap_err();
        assert!(err.to_string().contains("positive"), "{err}");
    }
}
