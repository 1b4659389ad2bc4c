#![allow(dead_code)]

use std::path::PathBuf;

use serde_json::Value;
use tracedr::experiment::{planted_data, train_on, PlantedData};
use tracedr_benchgen::{GenConfig, SynthConfig};
use tracedr_core::encoders::EncoderConfig;
use tracedr_core::gnn::{Preset, TrainConfig};
use tracedr_core::{Checkpoint, Pipeline};

pub fn schema_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../docs/api.schema.json")
}

/// Validator for one definition of the published API schema.
pub fn validator(def: &str) -> jsonschema::Validator {
    let text = std::fs::read_to_string(schema_path()).unwrap();
    let mut schema: Value = serde_json::from_str(&text).unwrap();
    schema["$ref"] = Value::String(format!("#/$defs/{def}"));
    jsonschema::validator_for(&schema).unwrap()
}

pub fn assert_valid(def: &str, value: &Value) {
    let v = validator(def);
    let errors: Vec<String> = v.iter_errors(value).map(|e| format!("{} at {}", e, e.instance_path())).collect();
    assert!(errors.is_empty(), "{def} schema violations: {errors:?}\n{value:#}");
}

/// A quickly trained small model on the planted KG.
pub fn small_model() -> (PlantedData, Pipeline, Checkpoint) {
    let gen = GenConfig {
        n_patients: 120,
        seed: 11,
        ..GenConfig::default()
    };
    let data = planted_data(&SynthConfig::planted(), &gen).unwrap();
    let config = TrainConfig {
        dim: 16,
        epochs: 1,
        ..TrainConfig::preset(Preset::Desk)
    };
    let (pipeline, out) = train_on(&data, &config).unwrap();
    let mut ckpt = Checkpoint::new(config.model_config(), EncoderConfig::Hash { dim: 16, seed: 0 }, out.params);
    ckpt.train_log = Some(out.log);
    (data, pipeline, ckpt)
}
