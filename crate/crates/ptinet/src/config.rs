//! Key=value configuration files. Flat keys mirror `TrainConfig` field
//! names, with dotted sections for the nested structs (`loss.beta`,
//! `encoder.latent_dim`). `#` starts a comment; blank lines are ignored.

use crate::error::{PtiError, Result};
use crate::train::TrainConfig;
use serde::de::DeserializeOwned;
use std::path::Path;
use std::str::FromStr;

/// Parse config text into ordered key/value pairs.
pub fn parse_config_str(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or(PtiError::Schema {
            line: i + 1,
            msg: format!("expected key=value, got {line:?}"),
        })?;
        let key = key.trim();
        let value = value.trim();
        if key.is_empty() {
            return Err(PtiError::Schema {
                line: i + 1,
                msg: "empty key".into(),
            });
        }
        pairs.push((key.to_string(), value.to_string()));
    }
    Ok(pairs)
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| PtiError::Config(format!("bad value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(PtiError::Config(format!(
            "bad boolean {value:?} for {key} (use true/false)"
        ))),
    }
}

/// Parse a kebab-case enum value through its serde representation.
fn parse_enum<T: DeserializeOwned>(key: &str, value: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(value.to_string()))
        .map_err(|_| PtiError::Config(format!("bad value {value:?} for {key}")))
}

fn parse_dims(key: &str, value: &str) -> Result<(usize, usize)> {
    let (h, w) = value.split_once('x').ok_or_else(|| {
        PtiError::Config(format!("bad value {value:?} for {key} (expected HxW)"))
    })?;
    Ok((parse_num(key, h.trim())?, parse_num(key, w.trim())?))
}

/// Set one field by key. Unknown keys are an error.
pub fn apply_key(cfg: &mut TrainConfig, key: &str, value: &str) -> Result<()> {
    match key {
        "m" => cfg.m = parse_num(key, value)?,
        "horizon_seconds" => cfg.horizon_seconds = parse_num(key, value)?,
        "lr_init" => cfg.lr_init = parse_num(key, value)?,
        "lr_power" => cfg.lr_power = parse_num(key, value)?,
        "max_epoch" | "epochs" => cfg.max_epoch = parse_num(key, value)?,
        "batch_size" => cfg.batch_size = parse_num(key, value)?,
        "adam_beta1" => cfg.adam_beta1 = parse_num(key, value)?,
        "adam_beta2" => cfg.adam_beta2 = parse_num(key, value)?,
        "adam_epsilon" => cfg.adam_epsilon = parse_num(key, value)?,
        "weight_decay" => cfg.weight_decay = parse_num(key, value)?,
        "seed" => cfg.seed = parse_num(key, value)?,
        "stride" => cfg.stride = parse_num(key, value)?,
        "normalize" => cfg.normalize = parse_enum(key, value)?,
        "target_dims" => cfg.target_dims = parse_dims(key, value)?,
        "use_images" => cfg.use_images = parse_bool(key, value)?,
        "use_flow" => cfg.use_flow = parse_bool(key, value)?,
        "trajectory_head" => cfg.trajectory_head = parse_enum(key, value)?,
        "couple_intention" => cfg.couple_intention = parse_bool(key, value)?,
        "train_data" => cfg.train_data = value.into(),
        "val_data" => cfg.val_data = Some(value.into()),
        "out_dir" => cfg.out_dir = value.into(),
        "distance_mode" => cfg.distance_mode = parse_enum(key, value)?,
        "intent_pooling" => cfg.intent_pooling = parse_enum(key, value)?,
        "loss.beta" => cfg.loss.beta = parse_num(key, value)?,
        "loss.lambda_traj" => cfg.loss.lambda_traj = parse_num(key, value)?,
        "loss.lambda_int" => cfg.loss.lambda_int = parse_num(key, value)?,
        "loss.epsilon" => cfg.loss.epsilon = parse_num(key, value)?,
        "loss.reconstruction_reg" => cfg.loss.reconstruction_reg = parse_bool(key, value)?,
        "encoder.latent_dim" => cfg.encoder.latent_dim = parse_num(key, value)?,
        "encoder.lstm_hidden" => cfg.encoder.lstm_hidden = parse_num(key, value)?,
        "encoder.lstm_layers" => cfg.encoder.lstm_layers = parse_num(key, value)?,
        "encoder.mlp_width" => cfg.encoder.mlp_width = parse_num(key, value)?,
        "encoder.convlstm_filters" => cfg.encoder.convlstm_filters = parse_num(key, value)?,
        "encoder.convlstm_kernel" => cfg.encoder.convlstm_kernel = parse_num(key, value)?,
        "encoder.convlstm_stride" => cfg.encoder.convlstm_stride = parse_num(key, value)?,
        "encoder.pool_size" => cfg.encoder.pool_size = parse_num(key, value)?,
        "encoder.flow_backbone" => cfg.encoder.flow_backbone = parse_enum(key, value)?,
        "encoder.flow_base_channels" => {
            cfg.encoder.flow_base_channels = parse_num(key, value)?
        }
        "encoder.gf_img_dim" => cfg.encoder.gf_img_dim = parse_num(key, value)?,
        "encoder.gf_o_dim" => cfg.encoder.gf_o_dim = parse_num(key, value)?,
        "encoder.use_scene_attrs" => cfg.encoder.use_scene_attrs = parse_bool(key, value)?,
        _ => {
            return Err(PtiError::Config(format!("unknown config key {key:?}")));
        }
    }
    Ok(())
}

/// Apply parsed pairs in order.
pub fn apply_pairs(cfg: &mut TrainConfig, pairs: &[(String, String)]) -> Result<()> {
    for (k, v) in pairs {
        apply_key(cfg, k, v)?;
    }
    Ok(())
}

/// Load a config file onto an existing config (later sources override).
pub fn load_config_file(cfg: &mut TrainConfig, path: &Path) -> Result<()> {
    let text = std::fs::read_to_string(path).map_err(|e| PtiError::io(path, e))?;
    apply_pairs(cfg, &parse_config_str(&text)?)
}
