//! Flat `key = value` training configuration.
//!
//! Blank lines and lines starting with `#` or `;` are ignored, `[section]`
//! headers are accepted and ignored, and every key may appear once. `kind`
//! is applied first so that kind-dependent defaults (batch size) apply to
//! unset keys.
//!
//! | key | default | meaning |
//! |-----|---------|---------|
//! | `kind` | `patch` | `patch`, `wavelet` or `shearlet` |
//! | `expert` | `gmm` | `gmm` or `gsm` (patch only) |
//! | `steps` | 100000 | optimizer steps |
//! | `batch_size` | 256 (patch), 8 | samples per step |
//! | `learning_rate` | 0.005 | base rate, cosine-decayed to 0 |
//! | `beta1`, `beta2` | 0.9, 0.999 | moment decay rates |
//! | `epsilon` | 1e-12 | AdaBelief epsilon |
//! | `grad_clip` | 1.0 | element-wise gradient bound |
//! | `sigma_max` | 0.4 | `sqrt(2t)` drawn from `(1e-4, sigma_max]` |
//! | `patch_side` | 7 | `b` |
//! | `crop_side` | 64 | crop side for wavelet/shearlet |
//! | `components` | 125 | `L`, odd |
//! | `gsm_scales` | 20 | `I` for GSM experts |
//! | `wavelet_taps`, `wavelet_levels` | 8, 3 | |
//! | `shearlet_scales` | 2 | |
//! | `seed` | 0 | |
//! | `log_every` | 100 | loss trace cadence |
//! | `validate_every` | 1000 | constraint monitor cadence |
//! | `checkpoint_every` | 0 | checkpoint archive cadence, 0 = off |

use std::collections::BTreeMap;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::ModelKind;
use crate::training::{ExpertKind, TrainConfig};

/// A training configuration plus run-level settings.
#[derive(Debug, Clone, PartialEq)]
#[derive(Default)]
pub struct TrainRun {
    pub train: TrainConfig,
    pub checkpoint_every: usize,
}


fn parse_value<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("invalid value '{v}' for '{key}'")))
}

/// Raw `key -> value` pairs with line numbers for messages.
fn pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if line.starts_with('[') && line.ends_with(']') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value'", i + 1)))?;
        let k = k.trim().to_ascii_lowercase();
        if out.insert(k.clone(), v.trim().to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key '{k}'", i + 1)));
        }
    }
    Ok(out)
}

/// Parses and validates a configuration text.
pub fn parse_train_run(text: &str) -> Result<TrainRun> {
    let mut kv = pairs(text)?;
    let kind = match kv.remove("kind") {
        Some(v) => v.parse::<ModelKind>()?,
        None => ModelKind::Patch,
    };
    let mut run = TrainRun {
        train: TrainConfig::for_kind(kind),
        checkpoint_every: 0,
    };
    let c = &mut run.train;
    for (k, v) in &kv {
        let v = v.as_str();
        match k.as_str() {
            "expert" => c.expert = ExpertKind::from_str(v)?,
            "steps" => c.steps = parse_value(k, v)?,
            "batch_size" => c.batch_size = parse_value(k, v)?,
            "learning_rate" => c.learning_rate = parse_value(k, v)?,
            "beta1" => c.beta1 = parse_value(k, v)?,
            "beta2" => c.beta2 = parse_value(k, v)?,
            "epsilon" => c.epsilon = parse_value(k, v)?,
            "grad_clip" => c.grad_clip = parse_value(k, v)?,
            "sigma_max" => c.sigma_max = parse_value(k, v)?,
            "patch_side" => c.patch_side = parse_value(k, v)?,
            "crop_side" => c.crop_side = parse_value(k, v)?,
            "components" => c.components = parse_value(k, v)?,
            "gsm_scales" => c.gsm_scales = parse_value(k, v)?,
            "wavelet_taps" => c.wavelet_taps = parse_value(k, v)?,
            "wavelet_levels" => c.wavelet_levels = parse_value(k, v)?,
            "shearlet_scales" => c.shearlet_scales = parse_value(k, v)?,
            "seed" => c.seed = parse_value(k, v)?,
            "log_every" => c.log_every = parse_value(k, v)?,
            "validate_every" => c.validate_every = parse_value(k, v)?,
            "checkpoint_every" => run.checkpoint_every = parse_value(k, v)?,
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
    }
    run.train.validate()?;
    Ok(run)
}

/// Canonical text of a run; parsing it gives the run back.
pub fn to_ini(run: &TrainRun) -> String {
    let c = &run.train;
    let rows: Vec<(&str, String)> = vec![
        ("kind", c.kind.to_string()),
        ("expert", c.expert.as_str().to_string()),
        ("steps", c.steps.to_string()),
        ("batch_size", c.batch_size.to_string()),
        ("learning_rate", format!("{:?}", c.learning_rate)),
        ("beta1", format!("{:?}", c.beta1)),
        ("beta2", format!("{:?}", c.beta2)),
        ("epsilon", format!("{:?}", c.epsilon)),
        ("grad_clip", format!("{:?}", c.grad_clip)),
        ("sigma_max", format!("{:?}", c.sigma_max)),
        ("patch_side", c.patch_side.to_string()),
        ("crop_side", c.crop_side.to_string()),
        ("components", c.components.to_string()),
        ("gsm_scales", c.gsm_scales.to_string()),
        ("wavelet_taps", c.wavelet_taps.to_string()),
        ("wavelet_levels", c.wavelet_levels.to_string()),
        ("shearlet_scales", c.shearlet_scales.to_string()),
        ("seed", c.seed.to_string()),
        ("log_every", c.log_every.to_string()),
        ("validate_every", c.validate_every.to_string()),
        ("checkpoint_every", run.checkpoint_every.to_string()),
    ];
    let mut s = String::from("[train]\n");
    for (k, v) in rows {
        s.push_str(&format!("{k} = {v}\n"));
    }
    s
}

/// First 16 hex digits of the SHA-256 of [`to_ini`].
pub fn config_hash(run: &TrainRun) -> String {
    let digest = Sha256::digest(to_ini(run).as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}
