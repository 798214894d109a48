//! Per-application workload descriptors and their normalized feature vectors.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Raw workload properties of one application plus its normalized feature
/// vector used to condition the contextual surrogate.
///
/// The large-magnitude fields (parameter bytes, instruction bytes, compute
/// ops) are normalized by their sum across the application set so only the
/// relative scale is encoded; op counts are scaled by a fixed constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextVector {
    pub conv_ops: u64,
    pub dw_ops: u64,
    pub ff_ops: u64,
    pub param_bytes: u64,
    pub instr_bytes: u64,
    pub compute_ops: u64,
    /// Normalized feature vector (length [`CONTEXT_DIM`]); empty until
    /// [`normalize_contexts`] has run over an application set.
    pub normalized: Vec<f64>,
}

/// Dimension of the normalized feature vector.
pub const CONTEXT_DIM: usize = 6;

const OP_COUNT_SCALE: f64 = 100.0;

impl ContextVector {
    pub fn new(
        conv_ops: u64,
        dw_ops: u64,
        ff_ops: u64,
        param_bytes: u64,
        instr_bytes: u64,
        compute_ops: u64,
    ) -> Self {
        Self {
            conv_ops,
            dw_ops,
            ff_ops,
            param_bytes,
            instr_bytes,
            compute_ops,
            normalized: Vec::new(),
        }
    }
}

/// Compute normalized feature vectors in place across an application set.
///
/// `param_bytes`, `instr_bytes` and `compute_ops` each sum to 1.0 across the
/// set after normalization.
pub fn normalize_contexts(apps: &mut BTreeMap<String, ContextVector>) {
    let sum = |f: fn(&ContextVector) -> u64| -> f64 {
        apps.values().map(|c| f(c) as f64).sum::<f64>().max(1.0)
    };
    let param_sum = sum(|c| c.param_bytes);
    let instr_sum = sum(|c| c.instr_bytes);
    let ops_sum = sum(|c| c.compute_ops);
    for ctx in apps.values_mut() {
        ctx.normalized = vec![
            ctx.conv_ops as f64 / OP_COUNT_SCALE,
            ctx.dw_ops as f64 / OP_COUNT_SCALE,
            ctx.ff_ops as f64 / OP_COUNT_SCALE,
            ctx.param_bytes as f64 / param_sum,
            ctx.instr_bytes as f64 / instr_sum,
            ctx.compute_ops as f64 / ops_sum,
        ];
    }
}

const MIB: u64 = 1 << 20;

/// Built-in library of the nine reference applications (image classification,
/// object detection, segmentation and speech models), keyed by id.
///
/// Feature vectors are not normalized; call [`normalize_contexts`] on the
/// subset an experiment uses.
pub fn builtin_applications() -> BTreeMap<String, ContextVector> {
    let mb = |x: f64| (x * MIB as f64).round() as u64;
    let mut apps = BTreeMap::new();
    let mut add = |name: &str, c: ContextVector| {
        apps.insert(name.to_string(), c);
    };
    add("mobilenet_edge", ContextVector::new(45, 13, 1, mb(3.87), 476_736, 1_989_811_168));
    add("mobilenet_v2", ContextVector::new(35, 17, 1, mb(3.31), 416_032, 609_353_376));
    add("mobilenet_v3", ContextVector::new(32, 15, 17, mb(5.20), 1_331_360, 449_219_600));
    add("m4", ContextVector::new(32, 13, 2, mb(6.23), 317_600, 3_471_920_128));
    add("m5", ContextVector::new(47, 27, 0, mb(2.16), 328_672, 939_752_960));
    add("m6", ContextVector::new(53, 33, 2, mb(0.41), 369_952, 228_146_848));
    add("unet", ContextVector::new(35, 0, 0, mb(3.69), 224_992, 13_707_214_848));
    add("trnn_dec", ContextVector::new(0, 0, 19, mb(19.0), 915_008, 40_116_224));
    add("trnn_enc", ContextVector::new(0, 0, 18, mb(21.62), 909_696, 45_621_248));
    apps
}

/// The built-in library restricted to `ids`.
///
/// Normalization always runs over the full library, so the same application
/// gets the same feature vector no matter which subset an experiment uses —
/// a model trained on some applications can be handed the context of one it
/// never saw.
pub fn contexts_for(ids: &[String]) -> crate::error::Result<BTreeMap<String, ContextVector>> {
    let mut lib = builtin_applications();
    normalize_contexts(&mut lib);
    let mut out = BTreeMap::new();
    for id in ids {
        let ctx = lib
            .get(id)
            .cloned()
            .ok_or_else(|| crate::error::Error::UnknownApp(id.clone()))?;
        out.insert(id.clone(), ctx);
    }
    Ok(out)
}
