//! Discrete accelerator design space: parameter specifications, index/one-hot
//! encodings and seeded uniform sampling.

use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One architectural parameter: a name plus an ordered ladder of raw values
/// (PE counts, memory bytes, bandwidth, ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    /// Strictly increasing raw values; configs store an index into this list.
    pub levels: Vec<f64>,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, levels: Vec<f64>) -> Result<Self> {
        let name = name.into();
        if levels.len() < 2 {
            return Err(Error::InvalidSpace(format!(
                "parameter `{name}` needs at least 2 levels, got {}",
                levels.len()
            )));
        }
        if levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidSpace(format!(
                "parameter `{name}` levels must be strictly increasing"
            )));
        }
        Ok(Self { name, levels })
    }

    pub fn cardinality(&self) -> usize {
        self.levels.len()
    }
}

/// Ordered collection of [`ParamSpec`]s defining the discrete search space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSpace {
    params: Vec<ParamSpec>,
}

/// A single point in the design space: one level index per parameter.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AcceleratorConfig {
    pub indices: Vec<usize>,
}

impl AcceleratorConfig {
    pub fn new(indices: Vec<usize>) -> Self {
        Self { indices }
    }
}

impl DesignSpace {
    pub fn new(params: Vec<ParamSpec>) -> Result<Self> {
        if params.is_empty() {
            return Err(Error::InvalidSpace("design space has no parameters".into()));
        }
        Ok(Self { params })
    }

    /// The primary ten-parameter accelerator template space.
    ///
    /// Cardinalities are fixed; the raw level ladders are a frozen, versioned
    /// stand-in built from powers-of-two memory sizes and linear count ranges
    /// (the published space gives counts of levels, not every raw value).
    pub fn default_accelerator() -> Self {
        let mem = |lo_pow2: u32, n: usize| -> Vec<f64> {
            (0..n).map(|i| f64::from(2u32) .powi((lo_pow2 + i as u32) as i32)).collect()
        };
        let params = vec![
            ParamSpec::new("pes_x", (1..=10).map(f64::from).collect()).unwrap(),
            ParamSpec::new("pes_y", (1..=10).map(f64::from).collect()).unwrap(),
            // 32 KiB .. 2 MiB
            ParamSpec::new("pe_memory", mem(15, 7)).unwrap(),
            // 2 .. 128 cores
            ParamSpec::new("num_cores", (1..=7).map(|i| f64::from(2u32.pow(i))).collect())
                .unwrap(),
            // 8 KiB .. 8 MiB
            ParamSpec::new("core_memory", mem(13, 11)).unwrap(),
            ParamSpec::new("compute_lanes", (1..=10).map(f64::from).collect()).unwrap(),
            // 8 KiB .. 64 KiB
            ParamSpec::new("instruction_memory", mem(13, 4)).unwrap(),
            // 1 KiB .. 16 KiB
            ParamSpec::new("parameter_memory", mem(10, 5)).unwrap(),
            // 512 B .. 32 KiB
            ParamSpec::new("activation_memory", mem(9, 7)).unwrap(),
            ParamSpec::new("dram_bandwidth_gbps", vec![5.0, 10.0, 15.0, 20.0, 25.0, 30.0])
                .unwrap(),
        ];
        Self { params }
    }

    pub fn params(&self) -> &[ParamSpec] {
        &self.params
    }

    /// Number of parameters (K).
    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.params.iter().map(ParamSpec::cardinality).collect()
    }

    /// Total number of points in the space (product of cardinalities).
    pub fn total_size(&self) -> u64 {
        self.params.iter().map(|p| p.cardinality() as u64).product()
    }

    /// Length of the concatenated one-hot encoding (sum of cardinalities).
    pub fn onehot_len(&self) -> usize {
        self.params.iter().map(ParamSpec::cardinality).sum()
    }

    pub fn validate(&self, config: &AcceleratorConfig) -> Result<()> {
        if config.indices.len() != self.num_params() {
            return Err(Error::ConfigLength {
                expected: self.num_params(),
                got: config.indices.len(),
            });
        }
        for (param, &index) in self.params.iter().zip(&config.indices) {
            if index >= param.cardinality() {
                return Err(Error::IndexOutOfRange {
                    param: param.name.clone(),
                    index,
                    cardinality: param.cardinality(),
                });
            }
        }
        Ok(())
    }

    /// Raw level values for a config, in parameter order.
    pub fn raw_values(&self, config: &AcceleratorConfig) -> Vec<f64> {
        self.params
            .iter()
            .zip(&config.indices)
            .map(|(p, &i)| p.levels[i])
            .collect()
    }

    /// Index of a parameter by name.
    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    /// Concatenated one-hot blocks, one block per parameter.
    pub fn encode_onehot(&self, config: &AcceleratorConfig) -> Result<Vec<f64>> {
        self.validate(config)?;
        let mut out = vec![0.0; self.onehot_len()];
        let mut offset = 0;
        for (param, &index) in self.params.iter().zip(&config.indices) {
            out[offset + index] = 1.0;
            offset += param.cardinality();
        }
        Ok(out)
    }

    /// Inverse of [`encode_onehot`](Self::encode_onehot).
    pub fn decode_onehot(&self, vec: &[f64]) -> Result<AcceleratorConfig> {
        if vec.len() != self.onehot_len() {
            return Err(Error::MalformedOneHot {
                block: 0,
                reason: format!("expected length {}, got {}", self.onehot_len(), vec.len()),
            });
        }
        let mut indices = Vec::with_capacity(self.num_params());
        let mut offset = 0;
        for (block, param) in self.params.iter().enumerate() {
            let slice = &vec[offset..offset + param.cardinality()];
            let mut hot = None;
            for (i, &v) in slice.iter().enumerate() {
                if v == 1.0 {
                    if hot.is_some() {
                        return Err(Error::MalformedOneHot {
                            block,
                            reason: "more than one entry set".into(),
                        });
                    }
                    hot = Some(i);
                } else if v != 0.0 {
                    return Err(Error::MalformedOneHot {
                        block,
                        reason: format!("entry {i} is {v}, expected 0 or 1"),
                    });
                }
            }
            let hot = hot.ok_or_else(|| Error::MalformedOneHot {
                block,
                reason: "no entry set".into(),
            })?;
            indices.push(hot);
            offset += param.cardinality();
        }
        Ok(AcceleratorConfig::new(indices))
    }

    /// Draw `n` configs, each index uniform and independent per parameter.
    pub fn sample_uniform<R: Rng>(&self, rng: &mut R, n: usize) -> Vec<AcceleratorConfig> {
        (0..n)
            .map(|_| {
                AcceleratorConfig::new(
                    self.params
                        .iter()
                        .map(|p| rng.gen_range(0..p.cardinality()))
                        .collect(),
                )
            })
            .collect()
    }

    /// Load a space from a text file: one line per parameter,
    /// `name,level,level,...` with `#` comments and blank lines ignored.
    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut params = Vec::new();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split(',');
            let name = fields.next().unwrap().trim().to_string();
            let levels: Vec<f64> = fields
                .map(|f| {
                    f.trim().parse::<f64>().map_err(|e| Error::Parse {
                        line: lineno + 1,
                        reason: format!("bad level `{}`: {e}", f.trim()),
                    })
                })
                .collect::<Result<_>>()?;
            params.push(ParamSpec::new(name, levels).map_err(|e| Error::Parse {
                line: lineno + 1,
                reason: e.to_string(),
            })?);
        }
        Self::new(params)
    }
}
