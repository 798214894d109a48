//! Offline dataset construction: random sampling through the oracle,
//! feasible/infeasible partitioning, worst-k training selection, best-20%
//! validation split, and a line-oriented file format.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::context::{contexts_for, ContextVector};
use crate::design_space::{AcceleratorConfig, DesignSpace};
use crate::error::{Error, Result};
use crate::oracle::{Oracle, Phase};

/// One feasible record: config, measured latency, owning application.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDesign {
    pub config: AcceleratorConfig,
    pub latency_ms: f64,
    pub app_id: String,
}

/// The logged dataset: feasible labeled designs plus unlabeled infeasible
/// configs, with the context of every referenced application.
#[derive(Debug, Clone, PartialEq)]
pub struct OfflineDataset {
    pub feasible: Vec<LabeledDesign>,
    pub infeasible: Vec<(AcceleratorConfig, String)>,
    pub apps: BTreeMap<String, ContextVector>,
}

/// Training/validation partition of an [`OfflineDataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<LabeledDesign>,
    pub validation: Vec<LabeledDesign>,
    pub infeasible_train: Vec<(AcceleratorConfig, String)>,
    pub apps: BTreeMap<String, ContextVector>,
}

/// Sample `n_samples` configs per application and label them through the
/// oracle. Deterministic under `rng_seed`; every sample is one metered query.
pub fn generate(
    space: &DesignSpace,
    oracle: &Oracle,
    contexts: &BTreeMap<String, ContextVector>,
    n_samples: usize,
    rng_seed: u64,
) -> Result<OfflineDataset> {
    if n_samples == 0 {
        return Err(Error::Argument("n_samples must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut feasible = Vec::new();
    let mut infeasible = Vec::new();
    for (app_id, ctx) in contexts {
        for config in space.sample_uniform(&mut rng, n_samples) {
            let res = oracle.simulate(space, &config, ctx, Phase::DatasetGen)?;
            if res.feasible {
                feasible.push(LabeledDesign {
                    config,
                    latency_ms: res.latency_ms.unwrap(),
                    app_id: app_id.clone(),
                });
            } else {
                infeasible.push((config, app_id.clone()));
            }
        }
    }
    Ok(OfflineDataset {
        feasible,
        infeasible,
        apps: contexts.clone(),
    })
}

impl OfflineDataset {
    /// Keep, per application, the `max_feasible` feasible points with the
    /// highest latency (the worst performers). Infeasible points are kept
    /// unchanged. Stable under ties; idempotent.
    pub fn select_training_subset(&self, max_feasible: usize) -> Result<OfflineDataset> {
        if max_feasible == 0 {
            return Err(Error::Argument("max_feasible must be >= 1".into()));
        }
        let mut keep: BTreeSet<usize> = BTreeSet::new();
        for app_id in self.apps.keys() {
            let mut idx: Vec<usize> = self
                .feasible
                .iter()
                .enumerate()
                .filter(|(_, d)| &d.app_id == app_id)
                .map(|(i, _)| i)
                .collect();
            idx.sort_by(|&a, &b| {
                self.feasible[b]
                    .latency_ms
                    .partial_cmp(&self.feasible[a].latency_ms)
                    .unwrap()
            });
            keep.extend(idx.into_iter().take(max_feasible));
        }
        Ok(OfflineDataset {
            feasible: self
                .feasible
                .iter()
                .enumerate()
                .filter(|(i, _)| keep.contains(i))
                .map(|(_, d)| d.clone())
                .collect(),
            infeasible: self.infeasible.clone(),
            apps: self.apps.clone(),
        })
    }

    /// Hold out, per application, the `fraction` feasible points with the
    /// lowest latency (the best performers) for validation only.
    pub fn split_validation(&self, fraction: f64) -> Result<DatasetSplit> {
        if !(0.0..1.0).contains(&fraction) || fraction <= 0.0 {
            return Err(Error::Argument(format!("fraction {fraction} not in (0, 1)")));
        }
        let mut val_idx: BTreeSet<usize> = BTreeSet::new();
        for app_id in self.apps.keys() {
            let mut idx: Vec<usize> = self
                .feasible
                .iter()
                .enumerate()
                .filter(|(_, d)| &d.app_id == app_id)
                .map(|(i, _)| i)
                .collect();
            if idx.is_empty() {
                continue;
            }
            if idx.len() < 5 {
                return Err(Error::Config(format!(
                    "application `{app_id}` has only {} feasible points (need >= 5)",
                    idx.len()
                )));
            }
            let n_val = ((fraction * idx.len() as f64).ceil() as usize).max(1);
            idx.sort_by(|&a, &b| {
                self.feasible[a]
                    .latency_ms
                    .partial_cmp(&self.feasible[b].latency_ms)
                    .unwrap()
            });
            val_idx.extend(idx.into_iter().take(n_val));
        }
        let (mut train, mut validation) = (Vec::new(), Vec::new());
        for (i, d) in self.feasible.iter().enumerate() {
            if val_idx.contains(&i) {
                validation.push(d.clone());
            } else {
                train.push(d.clone());
            }
        }
        Ok(DatasetSplit {
            train,
            validation,
            infeasible_train: self.infeasible.clone(),
            apps: self.apps.clone(),
        })
    }

    /// Serialize as CSV: `app_id,x1..xK,feasible,latency` (latency empty on
    /// infeasible rows). Written atomically.
    pub fn save(&self, space: &DesignSpace, path: &Path) -> Result<()> {
        let k = space.num_params();
        let mut out = String::from("app_id,");
        for i in 1..=k {
            out.push_str(&format!("x{i},"));
        }
        out.push_str("feasible,latency\n");
        let mut row = |config: &AcceleratorConfig, app: &str, latency: Option<f64>| {
            out.push_str(app);
            for &i in &config.indices {
                out.push_str(&format!(",{i}"));
            }
            match latency {
                Some(l) => out.push_str(&format!(",1,{l}\n")),
                None => out.push_str(",0,\n"),
            }
        };
        for d in &self.feasible {
            row(&d.config, &d.app_id, Some(d.latency_ms));
        }
        for (config, app) in &self.infeasible {
            row(config, app, None);
        }
        crate::fsutil::write_atomic(path, out.as_bytes())
    }

    /// Load a dataset file, resolving contexts from the built-in application
    /// library.
    pub fn load(space: &DesignSpace, path: &Path) -> Result<OfflineDataset> {
        let file = std::fs::File::open(path)?;
        let k = space.num_params();
        let mut feasible = Vec::new();
        let mut infeasible = Vec::new();
        let mut app_ids: BTreeSet<String> = BTreeSet::new();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            let parse_err = |reason: String| Error::Parse {
                line: lineno + 1,
                reason,
            };
            if lineno == 0 {
                if !line.starts_with("app_id,") {
                    return Err(parse_err("missing header".into()));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != k + 3 {
                return Err(parse_err(format!(
                    "expected {} fields, got {}",
                    k + 3,
                    fields.len()
                )));
            }
            let app_id = fields[0].to_string();
            let mut indices = Vec::with_capacity(k);
            for f in &fields[1..=k] {
                indices.push(
                    f.parse::<usize>()
                        .map_err(|e| parse_err(format!("bad index `{f}`: {e}")))?,
                );
            }
            let config = AcceleratorConfig::new(indices);
            space
                .validate(&config)
                .map_err(|e| parse_err(e.to_string()))?;
            let latency_field = fields[k + 2];
            match fields[k + 1] {
                "1" => {
                    let latency = latency_field
                        .parse::<f64>()
                        .map_err(|e| parse_err(format!("bad latency `{latency_field}`: {e}")))?;
                    if !(latency.is_finite() && latency > 0.0) {
                        return Err(parse_err(format!("latency {latency} must be positive")));
                    }
                    feasible.push(LabeledDesign {
                        config,
                        latency_ms: latency,
                        app_id: app_id.clone(),
                    });
                }
                "0" => {
                    if !latency_field.is_empty() {
                        return Err(parse_err(
                            "infeasible record carries a latency value".into(),
                        ));
                    }
                    infeasible.push((config, app_id.clone()));
                }
                other => return Err(parse_err(format!("bad feasible flag `{other}`"))),
            }
            app_ids.insert(app_id);
        }
        let apps = contexts_for(&app_ids.into_iter().collect::<Vec<_>>())?;
        Ok(OfflineDataset {
            feasible,
            infeasible,
            apps,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::contexts_for;
    use crate::oracle::OracleSpec;
    use proptest::prelude::*;

    fn one_app() -> BTreeMap<String, ContextVector> {
        contexts_for(&["mobilenet_v2".to_string()]).unwrap()
    }

    fn gen(n: usize, seed: u64) -> (DesignSpace, OfflineDataset) {
        let space = DesignSpace::default_accelerator();
        let oracle = Oracle::new(OracleSpec::default());
        let ds = generate(&space, &oracle, &one_app(), n, seed).unwrap();
        (space, ds)
    }

    fn synthetic(latencies: &[f64]) -> OfflineDataset {
        let apps = one_app();
        OfflineDataset {
            feasible: latencies
                .iter()
                .enumerate()
                .map(|(i, &l)| LabeledDesign {
                    config: AcceleratorConfig::new(vec![i % 10; 10]),
                    latency_ms: l,
                    app_id: "mobilenet_v2".to_string(),
                })
                .collect(),
            infeasible: vec![],
            apps,
        }
    }

    #[test]
    fn generation_partition_is_complete_and_metered() {
        let space = DesignSpace::default_accelerator();
        let oracle = Oracle::new(OracleSpec::default());
        let ds = generate(&space, &oracle, &one_app(), 1000, 1).unwrap();
        assert_eq!(ds.feasible.len() + ds.infeasible.len(), 1000);
        assert_eq!(oracle.ledger.queries(Phase::DatasetGen), 1000);
        let frac = ds.feasible.len() as f64 / 1000.0;
        assert!((0.10..=0.40).contains(&frac), "feasible fraction {frac}");
    }

    #[test]
    fn generation_is_deterministic() {
        let (_, a) = gen(300, 9);
        let (_, b) = gen(300, 9);
        assert_eq!(a, b);
    }

    #[test]
    fn worst_k_keeps_highest_latency() {
        let ds = synthetic(&[1., 2., 3., 4., 5., 6., 7., 8., 9., 10.]);
        let kept = ds.select_training_subset(3).unwrap();
        let mut ls: Vec<f64> = kept.feasible.iter().map(|d| d.latency_ms).collect();
        ls.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(ls, vec![8.0, 9.0, 10.0]);
    }

    #[test]
    fn worst_k_larger_than_pool_is_identity() {
        let ds = synthetic(&[3., 1., 2., 5., 4.]);
        assert_eq!(ds.select_training_subset(100).unwrap(), ds);
    }

    #[test]
    fn worst_k_never_keeps_lower_than_discarded() {
        let (_, ds) = gen(2000, 17);
        let kept = ds.select_training_subset(50).unwrap();
        let kept_set: BTreeSet<_> = kept.feasible.iter().map(|d| d.config.clone()).collect();
        let min_kept = kept
            .feasible
            .iter()
            .map(|d| d.latency_ms)
            .fold(f64::INFINITY, f64::min);
        for d in &ds.feasible {
            if !kept_set.contains(&d.config) {
                assert!(d.latency_ms <= min_kept);
            }
        }
    }

    #[test]
    fn split_takes_lowest_latency_for_validation() {
        let ds = synthetic(&[1., 2., 3., 4., 5.]);
        let split = ds.split_validation(0.2).unwrap();
        assert_eq!(split.validation.len(), 1);
        assert_eq!(split.validation[0].latency_ms, 1.0);
        let max_val = split.validation.iter().map(|d| d.latency_ms).fold(0.0, f64::max);
        for d in &split.train {
            assert!(d.latency_ms >= max_val);
        }
    }

    #[test]
    fn split_rejects_tiny_apps() {
        let ds = synthetic(&[1., 2., 3.]);
        assert!(ds.split_validation(0.2).is_err());
    }

    #[test]
    fn save_load_roundtrip() {
        let (space, ds) = gen(500, 21);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        ds.save(&space, &path).unwrap();
        let back = OfflineDataset::load(&space, &path).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn truncated_file_is_a_parse_error() {
        let (space, ds) = gen(100, 5);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        ds.save(&space, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let cut = &text[..text.len() - 10];
        std::fs::write(&path, cut).unwrap();
        assert!(matches!(
            OfflineDataset::load(&space, &path),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn infeasible_row_with_latency_is_rejected() {
        let space = DesignSpace::default_accelerator();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let mut text = String::from("app_id,x1,x2,x3,x4,x5,x6,x7,x8,x9,x10,feasible,latency\n");
        text.push_str("mobilenet_v2,0,0,0,0,0,0,0,0,0,0,0,123.0\n");
        std::fs::write(&path, text).unwrap();
        assert!(matches!(
            OfflineDataset::load(&space, &path),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn unknown_app_is_a_reference_error() {
        let space = DesignSpace::default_accelerator();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let mut text = String::from("app_id,x1,x2,x3,x4,x5,x6,x7,x8,x9,x10,feasible,latency\n");
        text.push_str("who_is_this,0,0,0,0,0,0,0,0,0,0,1,123.0\n");
        std::fs::write(&path, text).unwrap();
        assert!(matches!(
            OfflineDataset::load(&space, &path),
            Err(Error::UnknownApp(_))
        ));
    }

    #[test]
    fn selection_and_split_are_idempotent() {
        let (_, ds) = gen(1500, 33);
        let once = ds.select_training_subset(100).unwrap();
        let twice = once.select_training_subset(100).unwrap();
        assert_eq!(once, twice);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn prop_validation_size_is_ceil(n in 5usize..200) {
            let latencies: Vec<f64> = (0..n).map(|i| 1.0 + i as f64).collect();
            let ds = synthetic(&latencies);
            let split = ds.split_validation(0.2).unwrap();
            prop_assert_eq!(split.validation.len(), (0.2 * n as f64).ceil() as usize);
            prop_assert_eq!(split.validation.len() + split.train.len(), n);
        }
    }
}
