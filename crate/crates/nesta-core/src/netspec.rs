//! Network descriptions: parsing and validating layer lists, counting
//! work, and producing per-layer cost/access records. AlexNet and VGG-19
//! ship as bundled data files.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::costmodel::{
    check_bitwidths, cycles, fnv1a64, CostModelError, PpaTable, SizingCheck, SizingRule,
};
use crate::dataflow::{access_counts, AccessStats, DataflowKind};
use crate::oracle::{LayerShape, OracleError};
use crate::par;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetspecError {
    #[error("failed to parse network spec: {0}")]
    Parse(String),
    #[error("network has no layers")]
    Empty,
    #[error("layer {layer}: fully-connected layers canonicalize to kernel 1, stride 1, pad 0")]
    BadFcLayer { layer: usize },
    #[error("layer {layer}: {source}")]
    BadShape { layer: usize, source: OracleError },
    #[error(
        "layer {layer}: widths ({w_weight}, {w_data}) need {required} bits, \
         exceeding the {reg_size}-bit accumulator"
    )]
    SizingViolation {
        layer: usize,
        w_weight: u32,
        w_data: u32,
        required: u32,
        reg_size: u32,
    },
    #[error(transparent)]
    Cost(#[from] CostModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Conv,
    Fc,
}

/// One layer record as it appears in a spec file. `pad` is applied to the
/// input size before the valid convolution; fully-connected layers are
/// 1x1 convolutions over their flattened inputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub channels: usize,
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub input_size: usize,
    /// (weight bits, data bits) for the sizing rule.
    pub widths: (u32, u32),
}

impl LayerSpec {
    /// Geometry after padding, batch size one.
    pub fn shape(&self) -> Result<LayerShape, OracleError> {
        LayerShape::new(
            1,
            self.filters,
            self.channels,
            self.input_size + 2 * self.pad,
            self.kernel,
            self.stride,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub name: String,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<(), NetspecError> {
        if self.layers.is_empty() {
            return Err(NetspecError::Empty);
        }
        for (i, layer) in self.layers.iter().enumerate() {
            let idx = i + 1;
            if layer.kind == LayerKind::Fc
                && (layer.kernel != 1 || layer.stride != 1 || layer.pad != 0)
            {
                return Err(NetspecError::BadFcLayer { layer: idx });
            }
            layer
                .shape()
                .map_err(|source| NetspecError::BadShape { layer: idx, source })?;
        }
        Ok(())
    }
}

/// Parses and validates a network spec document. Unknown fields are
/// rejected; diagnostics carry the document position.
pub fn parse_network(document: &str) -> Result<NetworkSpec, NetspecError> {
    let spec: NetworkSpec =
        toml::from_str(document).map_err(|e| NetspecError::Parse(e.to_string()))?;
    spec.validate()?;
    Ok(spec)
}

/// Canonical serialization; `parse(serialize(spec)) == spec`.
pub fn serialize_network(spec: &NetworkSpec) -> String {
    toml::to_string_pretty(spec).expect("network specs serialize")
}

/// Work totals for a whole network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OpCounts {
    pub macs: u64,
    /// Two floating-point ops per multiply-accumulate.
    pub flops: u64,
    /// Multiply-accumulates spent in 3x3 convolutions.
    pub macs_3x3: u64,
}

pub fn network_op_count(spec: &NetworkSpec) -> Result<OpCounts, NetspecError> {
    let mut macs = 0u64;
    let mut macs_3x3 = 0u64;
    for (i, layer) in spec.layers.iter().enumerate() {
        let shape = layer
            .shape()
            .map_err(|source| NetspecError::BadShape { layer: i + 1, source })?;
        let m = shape.mac_count();
        macs += m;
        if layer.kind == LayerKind::Conv && layer.kernel == 3 {
            macs_3x3 += m;
        }
    }
    Ok(OpCounts {
        macs,
        flops: 2 * macs,
        macs_3x3,
    })
}

/// One analysis row: a layer costed on one PE type. Records carry hashes
/// of the spec and parameter documents they were computed from, so a
/// record is reproducible from its inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisRecord {
    pub layer: usize,
    pub pe_type: String,
    pub batches: u64,
    pub cycles: u64,
    pub time_ns: f64,
    pub energy_fj: f64,
    pub stats: AccessStats,
    pub spec_hash: u64,
    pub params_hash: u64,
}

pub const ANALYSIS_CSV_HEADER: &str =
    "layer,pe_type,batches,cycles,time_ns,energy_fj,ifmap_fetches,weight_fetches,psum_writes";

impl AnalysisRecord {
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:.3},{:.3},{},{},{}",
            self.layer,
            self.pe_type,
            self.batches,
            self.cycles,
            self.time_ns,
            self.energy_fj,
            self.stats.ifmap_fetches,
            self.stats.weight_fetches,
            self.stats.psum_writes,
        )
    }
}

/// Costs every layer on every requested PE type. Layers are analyzed in
/// parallel but reported in spec order; totals cover the whole layer (all
/// output neurons). Rows appear grouped by layer, PE types in request
/// order.
pub fn analyze_network(
    spec: &NetworkSpec,
    pe_names: &[String],
    table: &PpaTable,
    flow: DataflowKind,
) -> Result<Vec<AnalysisRecord>, NetspecError> {
    // A zero-layer spec analyzes to zero records; documents are rejected
    // at parse time instead.
    if !spec.layers.is_empty() {
        spec.validate()?;
    }
    let spec_hash = fnv1a64(serialize_network(spec).as_bytes());
    let params_hash = table.source_hash();
    for name in pe_names {
        table.get(name)?;
    }

    let per_layer = par::map_indexed(spec.layers.len(), |i| -> Result<_, NetspecError> {
        let layer = &spec.layers[i];
        let idx = i + 1;
        let shape = layer
            .shape()
            .map_err(|source| NetspecError::BadShape { layer: idx, source })?;
        let (w_weight, w_data) = layer.widths;
        let rule = SizingRule {
            reg_size: 36,
            n_ch: shape.channels as u32,
            window: (shape.kernel * shape.kernel) as u32,
            w_weight,
            w_data,
        };
        if let SizingCheck::Violation { required_bits, reg_size } = check_bitwidths(&rule) {
            return Err(NetspecError::SizingViolation {
                layer: idx,
                w_weight,
                w_data,
                required: required_bits,
                reg_size,
            });
        }

        let e = shape.output_size() as u64;
        let outputs = shape.filters as u64 * e * e;
        let window = (shape.kernel * shape.kernel) as u64;
        let batches_per_output = (window * shape.channels as u64).div_ceil(9);
        let stats = access_counts(&shape, flow);

        let mut rows = Vec::with_capacity(pe_names.len());
        for name in pe_names {
            let pe = table.get(name).expect("names checked above");
            let layer_cycles = outputs * cycles(pe, shape.kernel, shape.channels);
            let time_ns = layer_cycles as f64 * pe.delay_ns;
            rows.push(AnalysisRecord {
                layer: idx,
                pe_type: name.clone(),
                batches: outputs * batches_per_output,
                cycles: layer_cycles,
                time_ns,
                energy_fj: time_ns * pe.power_uw,
                stats,
                spec_hash,
                params_hash,
            });
        }
        Ok(rows)
    });

    let mut records = Vec::new();
    for rows in per_layer {
        records.extend(rows?);
    }
    Ok(records)
}

pub const ALEXNET_TOML: &str = include_str!("../data/alexnet.toml");
pub const VGG19_TOML: &str = include_str!("../data/vgg19.toml");

/// Bundled specs by name: `alexnet`, `vgg19` (alias `vgg`).
pub fn bundled(name: &str) -> Option<NetworkSpec> {
    let text = match name {
        "alexnet" => ALEXNET_TOML,
        "vgg19" | "vgg" => VGG19_TOML,
        _ => return None,
    };
    Some(parse_network(text).expect("bundled specs parse"))
}
