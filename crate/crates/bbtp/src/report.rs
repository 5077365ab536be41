//! Machine-readable report structures.
//!
//! Reports carry every throughput value twice: rounded to two decimals for
//! display and as the exact rational "num/den". Serialization is
//! deterministic (struct field order plus sorted maps), so identical inputs
//! produce byte-identical reports.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::model::{Detail, Prediction};
use crate::rational::{format2, format_exact, Rat};

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct RatValue {
    pub decimal: String,
    pub exact: String,
}

impl From<Rat> for RatValue {
    fn from(r: Rat) -> RatValue {
        RatValue {
            decimal: format2(r),
            exact: format_exact(r),
        }
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ComponentReport {
    pub bound: RatValue,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<serde_json::Value>,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct CounterfactualReport {
    pub idealized: String,
    pub throughput: RatValue,
    /// `None` when the idealized throughput is zero (unbounded speedup).
    pub speedup: Option<RatValue>,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct PredictionReport {
    pub block: String,
    pub arch: String,
    pub mode: String,
    pub throughput: RatValue,
    pub components: BTreeMap<String, ComponentReport>,
    pub bottlenecks: Vec<String>,
    pub primary_bottleneck: String,
    pub warnings: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counterfactual: Option<CounterfactualReport>,
}

pub fn detail_to_json(detail: &Detail) -> Option<serde_json::Value> {
    match detail {
        Detail::None => None,
        Detail::Predecode { blocks } => Some(serde_json::json!({
            "blocks": blocks
                .iter()
                .map(|b| {
                    serde_json::json!({
                        "block_index": b.block_index,
                        "last_byte_count": b.last_byte_count,
                        "opcode_only_count": b.opcode_only_count,
                        "lcp_count": b.lcp_count,
                        "cycles_nlcp": b.cycles_nlcp,
                        "cycles_lcp": b.cycles_lcp,
                    })
                })
                .collect::<Vec<_>>(),
        })),
        Detail::Decode {
            window_start_iteration,
            complex_per_iteration,
        } => Some(serde_json::json!({
            "window_start_iteration": window_start_iteration,
            "complex_per_iteration": complex_per_iteration,
        })),
        Detail::Ports {
            limiting,
            uop_count,
            instructions,
        } => Some(serde_json::json!({
            "limiting_ports": limiting.ports(),
            "uop_count": uop_count,
            "instructions": instructions,
        })),
        Detail::Precedence {
            cycle,
            defaulted_latencies,
        } => Some(serde_json::json!({
            "critical_cycle": cycle.iter().map(|n| n.to_string()).collect::<Vec<_>>(),
            "defaulted_latencies": defaulted_latencies,
        })),
    }
}

pub fn prediction_report(
    block_name: &str,
    arch: &str,
    prediction: &Prediction,
    counterfactual: Option<CounterfactualReport>,
) -> PredictionReport {
    let components = prediction
        .components
        .values()
        .map(|r| {
            (
                r.component.name().to_string(),
                ComponentReport {
                    bound: r.bound.into(),
                    detail: detail_to_json(&r.detail),
                },
            )
        })
        .collect();
    PredictionReport {
        block: block_name.to_string(),
        arch: arch.to_string(),
        mode: prediction.mode.to_string(),
        throughput: prediction.throughput.into(),
        components,
        bottlenecks: prediction
            .bottlenecks
            .iter()
            .map(|c| c.name().to_string())
            .collect(),
        primary_bottleneck: prediction.primary_bottleneck.name().to_string(),
        warnings: prediction.warnings.clone(),
        counterfactual,
    }
}
