//! Synthetic ground-truth simulator: deterministic feasibility, latency and
//! area for a (config, application) pair, with metered queries.
//!
//! This stands in for a cycle-accurate simulator. The latency form is a
//! roofline (compute-bound vs memory-bound) with a step penalty when on-chip
//! memory cannot hold the model footprint; infeasibility combines a seeded
//! hash band (emulating compile/map failures) with a structural on-chip
//! memory check.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::context::ContextVector;
use crate::design_space::{AcceleratorConfig, DesignSpace};
use crate::error::{Error, Result};

/// Coefficients of the synthetic roofline latency model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyModel {
    /// Compute ops retired per ms per (PE x PE x core x lane) unit.
    pub ops_per_unit_ms: f64,
    /// DRAM traffic generated per compute op (activations), in bytes.
    pub act_bytes_per_op: f64,
    /// Multiplier applied when on-chip memory is below the model footprint.
    pub mem_penalty_factor: f64,
    /// Fraction of the model footprint that must fit on chip for the design
    /// to be structurally feasible.
    pub mem_slack: f64,
    /// Fixed latency floor in ms.
    pub base_ms: f64,
}

impl Default for LatencyModel {
    fn default() -> Self {
        Self {
            ops_per_unit_ms: 1000.0,
            act_bytes_per_op: 0.05,
            mem_penalty_factor: 2.0,
            mem_slack: 0.5,
            base_ms: 1.0,
        }
    }
}

/// Full specification of the synthetic oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSpec {
    /// Fixed area floor in mm^2.
    pub area_base: f64,
    /// Per-parameter area contribution in mm^2 per raw unit, in the design
    /// space's parameter order.
    pub area_coefficients: Vec<f64>,
    pub latency: LatencyModel,
    /// Fraction of the space rejected by the seeded feasibility hash.
    pub infeasibility_hash_rate: f64,
    pub seed: u64,
    /// Synthetic wall-time cost per query, in seconds.
    pub query_cost_seconds: f64,
}

const PER_MIB: f64 = 1.0 / (1u64 << 20) as f64;

impl Default for OracleSpec {
    fn default() -> Self {
        Self {
            area_base: 2.0,
            // [pes_x, pes_y, pe_memory, num_cores, core_memory,
            //  compute_lanes, instruction_memory, parameter_memory,
            //  activation_memory, dram_bandwidth_gbps]
            area_coefficients: vec![
                0.5,
                0.5,
                2.0 * PER_MIB,
                0.15,
                2.0 * PER_MIB,
                0.3,
                1.0 * PER_MIB,
                1.0 * PER_MIB,
                1.0 * PER_MIB,
                0.05,
            ],
            latency: LatencyModel::default(),
            infeasibility_hash_rate: 0.4,
            seed: 0,
            query_cost_seconds: 1.0,
        }
    }
}

impl OracleSpec {
    pub fn validate(&self, space: &DesignSpace) -> Result<()> {
        if !(0.0..1.0).contains(&self.infeasibility_hash_rate) {
            return Err(Error::Config(format!(
                "infeasibility_hash_rate {} not in [0, 1)",
                self.infeasibility_hash_rate
            )));
        }
        if self.area_coefficients.len() != space.num_params() {
            return Err(Error::Config(format!(
                "{} area coefficients for a {}-parameter space",
                self.area_coefficients.len(),
                space.num_params()
            )));
        }
        let finite_pos = |v: f64| v.is_finite() && v > 0.0;
        if !self.area_coefficients.iter().all(|&c| finite_pos(c))
            || !finite_pos(self.area_base)
            || !finite_pos(self.latency.ops_per_unit_ms)
            || !finite_pos(self.latency.act_bytes_per_op)
            || !finite_pos(self.latency.mem_penalty_factor)
            || !finite_pos(self.latency.mem_slack)
            || !finite_pos(self.latency.base_ms)
        {
            return Err(Error::Config("oracle coefficients must be finite and positive".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::fsutil::write_atomic(path, serde_json::to_string_pretty(self)?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// One simulator answer. Infeasible results carry no latency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub feasible: bool,
    pub latency_ms: Option<f64>,
    pub area_mm2: f64,
}

/// Pipeline phase a query is attributed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    DatasetGen,
    Training,
    Evaluation,
    Baseline,
}

impl Phase {
    pub const ALL: [Phase; 4] = [
        Phase::DatasetGen,
        Phase::Training,
        Phase::Evaluation,
        Phase::Baseline,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Phase::DatasetGen => "dataset_gen",
            Phase::Training => "training",
            Phase::Evaluation => "evaluation",
            Phase::Baseline => "baseline",
        }
    }
}

/// Metered per-phase query counts and simulated wall time.
#[derive(Debug, Default)]
pub struct QueryLedger {
    inner: Mutex<BTreeMap<Phase, (u64, f64)>>,
}

impl QueryLedger {
    pub fn new() -> Self {
        Self::default()
    }

    fn record(&self, phase: Phase, cost_seconds: f64) {
        let mut inner = self.inner.lock().unwrap();
        let entry = inner.entry(phase).or_insert((0, 0.0));
        entry.0 += 1;
        entry.1 += cost_seconds;
    }

    pub fn queries(&self, phase: Phase) -> u64 {
        self.inner.lock().unwrap().get(&phase).map_or(0, |e| e.0)
    }

    pub fn total_queries(&self) -> u64 {
        self.inner.lock().unwrap().values().map(|e| e.0).sum()
    }

    pub fn total_sim_seconds(&self) -> f64 {
        self.inner.lock().unwrap().values().map(|e| e.1).sum()
    }

    /// Per-phase rows of (phase name, queries, simulated seconds).
    pub fn report(&self) -> Vec<(&'static str, u64, f64)> {
        let inner = self.inner.lock().unwrap();
        Phase::ALL
            .iter()
            .map(|&p| {
                let (q, s) = inner.get(&p).copied().unwrap_or((0, 0.0));
                (p.name(), q, s)
            })
            .collect()
    }

    /// CSV with one row per phase plus a total row.
    pub fn report_csv(&self) -> String {
        let mut out = String::from("phase,queries,sim_seconds\n");
        for (name, q, s) in self.report() {
            out.push_str(&format!("{name},{q},{s}\n"));
        }
        out.push_str(&format!(
            "total,{},{}\n",
            self.total_queries(),
            self.total_sim_seconds()
        ));
        out
    }
}

/// The simulator: an [`OracleSpec`] plus its query ledger.
#[derive(Debug, Default)]
pub struct Oracle {
    pub spec: OracleSpec,
    pub ledger: QueryLedger,
}

impl Oracle {
    pub fn new(spec: OracleSpec) -> Self {
        Self {
            spec,
            ledger: QueryLedger::new(),
        }
    }

    /// Chip area in mm^2. Monotone non-decreasing in every raw level.
    pub fn area(&self, space: &DesignSpace, config: &AcceleratorConfig) -> f64 {
        area(&self.spec, space, config)
    }

    /// One metered simulator query.
    pub fn simulate(
        &self,
        space: &DesignSpace,
        config: &AcceleratorConfig,
        context: &ContextVector,
        phase: Phase,
    ) -> Result<SimResult> {
        space.validate(config)?;
        let result = simulate_unmetered(&self.spec, space, config, context);
        self.ledger.record(phase, self.spec.query_cost_seconds);
        Ok(result)
    }
}

pub fn area(spec: &OracleSpec, space: &DesignSpace, config: &AcceleratorConfig) -> f64 {
    let raw = space.raw_values(config);
    spec.area_base
        + raw
            .iter()
            .zip(&spec.area_coefficients)
            .map(|(&v, &c)| v * c)
            .sum::<f64>()
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seeded hash of (seed, indices) mapped to [0, 1).
fn feasibility_hash(seed: u64, config: &AcceleratorConfig) -> f64 {
    let mut h = splitmix64(seed ^ 0xA5A5_5A5A_DEAD_BEEF);
    for (k, &idx) in config.indices.iter().enumerate() {
        h = splitmix64(h ^ ((k as u64) << 32 | idx as u64));
    }
    (h >> 11) as f64 / (1u64 << 53) as f64
}

struct RawParams {
    pes_x: f64,
    pes_y: f64,
    num_cores: f64,
    core_memory: f64,
    compute_lanes: f64,
    dram_bw_gbps: f64,
}

fn raw_params(space: &DesignSpace, config: &AcceleratorConfig) -> RawParams {
    let raw = space.raw_values(config);
    let by = |name: &str| {
        space
            .param_index(name)
            .map(|i| raw[i])
            .unwrap_or_else(|| panic!("oracle requires parameter `{name}` in the design space"))
    };
    RawParams {
        pes_x: by("pes_x"),
        pes_y: by("pes_y"),
        num_cores: by("num_cores"),
        core_memory: by("core_memory"),
        compute_lanes: by("compute_lanes"),
        dram_bw_gbps: by("dram_bandwidth_gbps"),
    }
}

fn simulate_unmetered(
    spec: &OracleSpec,
    space: &DesignSpace,
    config: &AcceleratorConfig,
    context: &ContextVector,
) -> SimResult {
    let area_mm2 = area(spec, space, config);
    let p = raw_params(space, config);
    let lm = &spec.latency;

    // On-chip storage available for model parameters: the per-core buffers.
    let on_chip = p.num_cores * p.core_memory;
    let footprint = context.param_bytes as f64;

    let hash_ok = feasibility_hash(spec.seed, config) >= spec.infeasibility_hash_rate;
    let structural_ok = on_chip >= lm.mem_slack * footprint;
    if !(hash_ok && structural_ok) {
        return SimResult {
            feasible: false,
            latency_ms: None,
            area_mm2,
        };
    }

    let units = p.pes_x * p.pes_y * p.num_cores * p.compute_lanes;
    let compute_ms = context.compute_ops as f64 / (units * lm.ops_per_unit_ms);
    let traffic_bytes = footprint
        + context.instr_bytes as f64
        + context.compute_ops as f64 * lm.act_bytes_per_op;
    let bw_bytes_per_ms = p.dram_bw_gbps * 125_000.0;
    let mem_ms = traffic_bytes / bw_bytes_per_ms;
    let mut latency = lm.base_ms + compute_ms.max(mem_ms);
    if on_chip < footprint {
        latency *= lm.mem_penalty_factor;
    }
    SimResult {
        feasible: true,
        latency_ms: Some(latency),
        area_mm2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::builtin_applications;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn default_setup() -> (DesignSpace, Oracle, ContextVector) {
        let space = DesignSpace::default_accelerator();
        let oracle = Oracle::new(OracleSpec::default());
        let ctx = builtin_applications()["mobilenet_v2"].clone();
        (space, oracle, ctx)
    }

    #[test]
    fn minimal_config_has_smallest_area() {
        let (space, oracle, _) = default_setup();
        let min = oracle.area(&space, &AcceleratorConfig::new(vec![0; 10]));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for x in space.sample_uniform(&mut rng, 500) {
            assert!(oracle.area(&space, &x) >= min);
        }
    }

    #[test]
    fn area_is_monotone_in_every_parameter() {
        let (space, oracle, _) = default_setup();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for x in space.sample_uniform(&mut rng, 200) {
            let a0 = oracle.area(&space, &x);
            for k in 0..space.num_params() {
                if x.indices[k] + 1 < space.params()[k].cardinality() {
                    let mut up = x.clone();
                    up.indices[k] += 1;
                    assert!(oracle.area(&space, &up) >= a0);
                }
            }
        }
    }

    #[test]
    fn simulate_is_deterministic() {
        let (space, oracle, ctx) = default_setup();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for x in space.sample_uniform(&mut rng, 50) {
            let a = oracle.simulate(&space, &x, &ctx, Phase::DatasetGen).unwrap();
            let b = oracle.simulate(&space, &x, &ctx, Phase::DatasetGen).unwrap();
            assert_eq!(a, b);
            if !a.feasible {
                assert!(a.latency_ms.is_none());
            } else {
                assert!(a.latency_ms.unwrap() > 0.0);
            }
        }
    }

    #[test]
    fn feasible_fraction_in_target_band() {
        let (space, oracle, ctx) = default_setup();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 10_000;
        let feas = space
            .sample_uniform(&mut rng, n)
            .iter()
            .filter(|x| {
                oracle
                    .simulate(&space, x, &ctx, Phase::DatasetGen)
                    .unwrap()
                    .feasible
            })
            .count();
        let frac = feas as f64 / n as f64;
        assert!(
            (0.10..=0.40).contains(&frac),
            "feasible fraction {frac} outside [0.10, 0.40]"
        );
    }

    #[test]
    fn area_constraint_excludes_roughly_largest_third() {
        let (space, oracle, _) = default_setup();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 10_000;
        let over = space
            .sample_uniform(&mut rng, n)
            .iter()
            .filter(|x| oracle.area(&space, x) > 29.0)
            .count();
        let frac = over as f64 / n as f64;
        assert!(
            (0.15..=0.50).contains(&frac),
            "fraction over 29 mm^2 is {frac}"
        );
    }

    #[test]
    fn more_bandwidth_never_hurts_memory_bound_cases() {
        let (space, oracle, ctx) = default_setup();
        let bw = space.param_index("dram_bandwidth_gbps").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut checked = 0;
        for mut x in space.sample_uniform(&mut rng, 4000) {
            x.indices[bw] = 0;
            let lo = oracle.simulate(&space, &x, &ctx, Phase::DatasetGen).unwrap();
            let mut x_hi = x.clone();
            x_hi.indices[bw] = 2; // 3x the bandwidth, hash band unchanged? no: indices differ
            let hi = oracle
                .simulate(&space, &x_hi, &ctx, Phase::DatasetGen)
                .unwrap();
            if let (Some(l), Some(h)) = (lo.latency_ms, hi.latency_ms) {
                assert!(h <= l + 1e-9, "bandwidth increase raised latency {l} -> {h}");
                checked += 1;
                if checked >= 1000 {
                    break;
                }
            }
        }
        assert!(checked >= 200, "too few comparable pairs: {checked}");
    }

    #[test]
    fn step_penalty_at_footprint_threshold() {
        let (space, _, _) = default_setup();
        // Footprint chosen between two adjacent on-chip sizes so the pair
        // straddles the penalty threshold.
        let cores = space.param_index("num_cores").unwrap();
        let cmem = space.param_index("core_memory").unwrap();
        let mut below = AcceleratorConfig::new(vec![4, 4, 3, 3, 5, 4, 1, 2, 3, 3]);
        below.indices[cores] = 3; // 16 cores
        below.indices[cmem] = 5; // 256 KiB -> 4 MiB on chip
        let mut above = below.clone();
        above.indices[cmem] = 6; // 512 KiB -> 8 MiB on chip
        let ctx = ContextVector::new(30, 10, 1, 6 << 20, 400_000, 800_000_000);
        let oracle = Oracle::new(OracleSpec {
            infeasibility_hash_rate: 0.0,
            ..OracleSpec::default()
        });
        let lb = oracle
            .simulate(&space, &below, &ctx, Phase::DatasetGen)
            .unwrap()
            .latency_ms
            .unwrap();
        let la = oracle
            .simulate(&space, &above, &ctx, Phase::DatasetGen)
            .unwrap()
            .latency_ms
            .unwrap();
        assert!(lb >= 1.5 * la, "no step: below={lb} above={la}");
    }

    #[test]
    fn ledger_counts_every_query() {
        let (space, oracle, ctx) = default_setup();
        assert_eq!(oracle.ledger.total_queries(), 0);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for x in space.sample_uniform(&mut rng, 17) {
            oracle.simulate(&space, &x, &ctx, Phase::Evaluation).unwrap();
        }
        assert_eq!(oracle.ledger.queries(Phase::Evaluation), 17);
        assert_eq!(oracle.ledger.total_queries(), 17);
        assert!((oracle.ledger.total_sim_seconds() - 17.0).abs() < 1e-12);
        // invalid config is not counted
        let bad = AcceleratorConfig::new(vec![0; 3]);
        assert!(oracle.simulate(&space, &bad, &ctx, Phase::Evaluation).is_err());
        assert_eq!(oracle.ledger.total_queries(), 17);
    }

    #[test]
    fn report_totals_match() {
        let ledger = QueryLedger::new();
        ledger.record(Phase::DatasetGen, 1.0);
        ledger.record(Phase::Evaluation, 1.0);
        ledger.record(Phase::Evaluation, 1.0);
        let rows = ledger.report();
        let sum: u64 = rows.iter().map(|r| r.1).sum();
        assert_eq!(sum, ledger.total_queries());
        assert!(ledger.report_csv().contains("evaluation,2,2\n"));
    }

    #[test]
    fn spec_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("oracle.json");
        let spec = OracleSpec::default();
        spec.save(&path).unwrap();
        assert_eq!(OracleSpec::load(&path).unwrap(), spec);
    }

    #[test]
    fn table8_analog_area_ordering() {
        // Raw values recoverable from the published best-config comparison:
        // the offline-optimized design trades compute for PE memory and must
        // come out smaller than the evolutionary design under our
        // coefficients.
        let space = DesignSpace::default_accelerator();
        let oracle = Oracle::new(OracleSpec::default());
        let by_raw = |vals: &[(usize, f64)]| {
            let mut indices = vec![0; space.num_params()];
            for &(k, v) in vals {
                indices[k] = space.params()[k]
                    .levels
                    .iter()
                    .position(|&l| l == v)
                    .unwrap_or_else(|| panic!("level {v} missing from param {k}"));
            }
            AcceleratorConfig::new(indices)
        };
        let idx = |n: &str| space.param_index(n).unwrap();
        let compact = by_raw(&[
            (idx("pes_x"), 4.0),
            (idx("pes_y"), 6.0),
            (idx("num_cores"), 64.0),
            (idx("compute_lanes"), 4.0),
            (idx("pe_memory"), 2_097_152.0),
            (idx("core_memory"), 131_072.0),
            (idx("instruction_memory"), 32_768.0),
            (idx("parameter_memory"), 4_096.0),
            (idx("activation_memory"), 512.0),
            (idx("dram_bandwidth_gbps"), 30.0),
        ]);
        let evo = by_raw(&[
            (idx("pes_x"), 4.0),
            (idx("pes_y"), 8.0),
            (idx("num_cores"), 128.0),
            (idx("compute_lanes"), 6.0),
            (idx("pe_memory"), 1_048_576.0),
            (idx("core_memory"), 131_072.0),
            (idx("instruction_memory"), 8_192.0),
            (idx("parameter_memory"), 4_096.0),
            (idx("activation_memory"), 2_048.0),
            (idx("dram_bandwidth_gbps"), 30.0),
        ]);
        assert!(oracle.area(&space, &compact) < oracle.area(&space, &evo));
    }
}
