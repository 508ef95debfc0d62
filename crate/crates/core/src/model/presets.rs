//! Named model presets reconstructing well-known CTR architectures.

use super::{parse_code, ClassifierSpec, ModelConfig};
use crate::aggregate::CombineMode;
use crate::data::Task;
use crate::error::{Error, Result};

/// Recognized preset names.
pub const PRESET_NAMES: [&str; 13] = [
    "FM",
    "FwFM",
    "FvFM",
    "FmFM",
    "HOFM",
    "xDeepFM-CIN",
    "DCNv2-CrossNet",
    "PFL",
    "WFL",
    "DFL",
    "PFT",
    "PFE",
    "PFD",
];

/// Builds the configuration of a named preset for `m` fields with the given
/// vocabularies.
///
/// The classic second-order family (FM/FwFM/FvFM/FmFM) shares one weight per
/// unordered field pair, pools each pair exactly once, keeps the raw
/// embedding layer out of aggregation and turns on the first-order part, so
/// each model's score equals its textbook pair-sum formula exactly. Derived
/// high-order codes use the plain code semantics.
pub fn preset(name: &str, m: usize, k: usize, vocabs: &[u32], task: Task) -> Result<ModelConfig> {
    let canonical = PRESET_NAMES
        .iter()
        .find(|p| p.eq_ignore_ascii_case(name.trim()))
        .ok_or_else(|| {
            Error::Parse(format!(
                "unknown preset '{name}' (expected one of {})",
                PRESET_NAMES.join(", ")
            ))
        })?;

    let second_order_family = |code: &str, l: usize| -> Result<ModelConfig> {
        let mut config = ModelConfig::from_code(parse_code(code)?, m, k, l, vocabs, task);
        config.symmetric_share = true;
        config.pair_once = true;
        config.include_self = false;
        config.agg_include_first = false;
        config.first_order = true;
        config.classifier = ClassifierSpec::SumPool;
        Ok(config)
    };

    match *canonical {
        "FM" => second_order_family("NFD", 2),
        "FwFM" => second_order_family("WFD", 2),
        "FvFM" => second_order_family("DFD", 2),
        "FmFM" => second_order_family("PFD", 2),
        "HOFM" => second_order_family("NFD", 3),
        "xDeepFM-CIN" => {
            let mut config = ModelConfig::from_code(parse_code("WGT")?, m, k, 3, vocabs, task);
            config.global_width = 10;
            config.term_scalar_pool = true;
            config.combine = CombineMode::Concat;
            config.agg_include_first = false;
            Ok(config)
        }
        "DCNv2-CrossNet" => {
            let mut config = ModelConfig::from_code(parse_code("PF'D")?, m, k, 4, vocabs, task);
            config.include_self = true;
            Ok(config)
        }
        code @ ("PFL" | "WFL" | "DFL" | "PFT" | "PFE" | "PFD") => {
            Ok(ModelConfig::from_code(parse_code(code)?, m, k, 4, vocabs, task))
        }
        _ => unreachable!("preset table covers all names"),
    }
}
