//! Model archives: a ZIP file holding `manifest.json` and one raw
//! little-endian `f64` blob per tensor under `tensors/`.
//!
//! Tensors by model kind (shapes in row-major order):
//!
//! * patch: `filters [a, J]`, `weights [J, P]`, and `eta [J]`, `sigma0 [J]`
//!   for GMM experts or `scales [J, I]` for GSM experts
//! * wavelet: `h [K]`, `lambdas [B]`, `multipliers [2 + K/2]` (scaling,
//!   admissibility, shift orthogonality), `weights [B, P]`, `eta [B]`,
//!   `sigma0 [B]`
//! * shearlet: `h1 [9]`, `P [17, 17]`, `lambdas [B]`, `weights [B, P]`,
//!   `eta [B]`, `sigma0 [B]`
//! * optionally `opt_m [N]`, `opt_s [N]`: optimizer moments for resuming
//!
//! `P` is `ceil(L/2)` stored half weights for GMM experts. Entries are
//! written with a fixed timestamp, so equal models give equal bytes.

use std::collections::BTreeSet;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use zip::write::SimpleFileOptions;
use zip::{CompressionMethod, DateTime, ZipArchive, ZipWriter};

use crate::error::{Error, Result};
use crate::experts::{Expert, GmmExpert, GsmExpert};
use crate::mathkit::LagrangeMultipliers;
use crate::model::{Model, ModelKind};
use crate::patch::PatchModel;
use crate::shearlet::{ShearletModel, ShearletParams, P_SIDE};
use crate::training::OptimizerState;
use crate::wavelet::WaveletModel;

pub const FORMAT: &str = "pogmdm-model";
pub const VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";

fn archive_err(msg: impl Into<String>) -> Error {
    Error::Archive(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
}

/// Hyperparameters, for reading; the tensors are authoritative.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Hyper {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub patch_side: Option<usize>,
    /// Number of experts (filters or bands).
    pub experts: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub components: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma0: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z_grid: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub levels: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub taps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scales: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    /// Completed optimizer steps.
    pub steps: usize,
    pub config_hash: String,
    /// Canonical configuration text.
    pub config: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub kind: String,
    pub expert: String,
    pub hyper: Hyper,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingMeta>,
    pub tensors: Vec<TensorEntry>,
}

/// A model with optional training metadata and optimizer state.
#[derive(Debug, Clone)]
pub struct ModelArchive {
    pub model: Model,
    pub training: Option<TrainingMeta>,
    pub optimizer: Option<OptimizerState>,
}

struct Tensor {
    name: &'static str,
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn tensor(name: &'static str, shape: Vec<usize>, data: Vec<f64>) -> Tensor {
    Tensor { name, shape, data }
}

fn expert_kind(experts: &[Expert]) -> &'static str {
    match experts.first() {
        Some(Expert::Gsm(_)) => "gsm",
        _ => "gmm",
    }
}

/// `weights`, then `eta`/`sigma0` (GMM) or `scales` (GSM).
fn expert_tensors(experts: &[Expert], hyper: &mut Hyper) -> Result<Vec<Tensor>> {
    let n = experts.len();
    let np = experts.first().map_or(0, |e| e.n_params());
    if experts.iter().any(|e| e.n_params() != np) {
        return Err(archive_err("experts differ in parameter count"));
    }
    let weights: Vec<f64> = experts.iter().flat_map(|e| e.params().to_vec()).collect();
    let mut out = vec![tensor("weights", vec![n, np], weights)];
    match experts.first() {
        Some(Expert::Gsm(first)) => {
            let mut scales = Vec::new();
            for e in experts {
                match e {
                    Expert::Gsm(g) => scales.extend_from_slice(g.scales()),
                    Expert::Gmm(_) => return Err(archive_err("mixed expert families")),
                }
            }
            hyper.z_grid = Some(first.scales().to_vec());
            hyper.components = Some(first.scales().len());
            out.push(tensor("scales", vec![n, np], scales));
        }
        _ => {
            let mut eta = Vec::new();
            let mut sigma0 = Vec::new();
            let mut comps = None;
            for e in experts {
                match e {
                    Expert::Gmm(g) => {
                        if comps.is_some_and(|c| c != g.components()) {
                            return Err(archive_err("experts differ in component count"));
                        }
                        comps = Some(g.components());
                        eta.push(g.eta());
                        sigma0.push(g.sigma0());
                    }
                    Expert::Gsm(_) => return Err(archive_err("mixed expert families")),
                }
            }
            hyper.components = comps;
            hyper.eta = Some(eta.clone());
            hyper.sigma0 = Some(sigma0.clone());
            out.push(tensor("eta", vec![n], eta));
            out.push(tensor("sigma0", vec![n], sigma0));
        }
    }
    Ok(out)
}

fn model_tensors(model: &Model) -> Result<(Hyper, Vec<Tensor>)> {
    let mut hyper = Hyper {
        experts: model.experts().len(),
        ..Hyper::default()
    };
    let mut ts = Vec::new();
    match model {
        Model::Patch(m) => {
            let k = m.filters();
            let (a, j) = k.shape();
            hyper.patch_side = Some(m.side());
            ts.push(tensor("filters", vec![a, j], k.transpose().as_slice().to_vec()));
        }
        Model::Wavelet(m) => {
            hyper.levels = Some(m.levels());
            hyper.taps = Some(m.h().len());
            ts.push(tensor("h", vec![m.h().len()], m.h().to_vec()));
            ts.push(tensor("lambdas", vec![m.lambdas().len()], m.lambdas().to_vec()));
            let mu = m.multipliers();
            let mut v = vec![mu.scal, mu.adm];
            v.extend_from_slice(&mu.orth);
            ts.push(tensor("multipliers", vec![v.len()], v));
        }
        Model::Shearlet(m) => {
            let p = m.params();
            hyper.scales = Some(p.scales);
            ts.push(tensor("h1", vec![p.h1.len()], p.h1.clone()));
            ts.push(tensor("P", vec![P_SIDE, P_SIDE], p.p.clone()));
            ts.push(tensor("lambdas", vec![p.lambdas.len()], p.lambdas.clone()));
        }
    }
    ts.extend(expert_tensors(model.experts(), &mut hyper)?);
    Ok((hyper, ts))
}

impl ModelArchive {
    pub fn new(model: Model) -> Self {
        Self {
            model,
            training: None,
            optimizer: None,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.model.validate()?;
        let (hyper, mut tensors) = model_tensors(&self.model)?;
        if let Some(opt) = &self.optimizer {
            let n = self.model.n_params();
            if opt.m.len() != n || opt.s.len() != n {
                return Err(archive_err("optimizer state does not match the model"));
            }
            tensors.push(tensor("opt_m", vec![n], opt.m.clone()));
            tensors.push(tensor("opt_s", vec![n], opt.s.clone()));
        }
        let mut training = self.training.clone();
        if let (Some(t), Some(o)) = (training.as_mut(), &self.optimizer) {
            t.steps = o.step;
        }
        let manifest = Manifest {
            format: FORMAT.into(),
            version: VERSION,
            kind: self.model.kind().to_string(),
            expert: expert_kind(self.model.experts()).into(),
            hyper,
            training,
            tensors: tensors
                .iter()
                .map(|t| TensorEntry {
                    name: t.name.into(),
                    shape: t.shape.clone(),
                    file: format!("tensors/{}.f64", t.name),
                })
                .collect(),
        };
        let opts = SimpleFileOptions::default()
            .compression_method(CompressionMethod::Deflated)
            .last_modified_time(DateTime::default())
            .unix_permissions(0o644);
        let mut zip = ZipWriter::new(Cursor::new(Vec::new()));
        let zerr = |e: zip::result::ZipError| archive_err(e.to_string());
        zip.start_file(MANIFEST, opts).map_err(zerr)?;
        let json = serde_json::to_vec_pretty(&manifest).map_err(|e| archive_err(e.to_string()))?;
        zip.write_all(&json)?;
        for (t, entry) in tensors.iter().zip(&manifest.tensors) {
            zip.start_file(entry.file.as_str(), opts).map_err(zerr)?;
            let bytes: Vec<u8> = t.data.iter().flat_map(|v| v.to_le_bytes()).collect();
            zip.write_all(&bytes)?;
        }
        Ok(zip.finish().map_err(zerr)?.into_inner())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes)
    }

    /// Reads and re-validates every model invariant.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let zerr = |e: zip::result::ZipError| archive_err(e.to_string());
        let mut zip = ZipArchive::new(Cursor::new(bytes)).map_err(zerr)?;
        let manifest: Manifest = {
            let mut f = zip.by_name(MANIFEST).map_err(zerr)?;
            let mut s = Vec::new();
            f.read_to_end(&mut s)?;
            serde_json::from_slice(&s).map_err(|e| archive_err(format!("bad manifest: {e}")))?
        };
        if manifest.format != FORMAT || manifest.version != VERSION {
            return Err(archive_err(format!(
                "unsupported archive format {} v{}",
                manifest.format, manifest.version
            )));
        }
        let listed: BTreeSet<String> = manifest
            .tensors
            .iter()
            .map(|t| t.file.clone())
            .chain([MANIFEST.to_string()])
            .collect();
        let present: BTreeSet<String> = zip
            .file_names()
            .map(|n| n.map(|n| n.into_owned()))
            .collect::<std::result::Result<_, _>>()
            .map_err(zerr)?;
        if listed != present {
            return Err(archive_err("archive entries do not match the manifest tensor list"));
        }
        let mut store = TensorStore::default();
        for entry in &manifest.tensors {
            let mut f = zip.by_name(&entry.file).map_err(zerr)?;
            let mut raw = Vec::new();
            f.read_to_end(&mut raw)?;
            let n: usize = entry.shape.iter().product();
            if raw.len() != 8 * n {
                return Err(archive_err(format!(
                    "tensor {} has {} bytes, shape {:?} needs {}",
                    entry.name,
                    raw.len(),
                    entry.shape,
                    8 * n
                )));
            }
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            store.put(entry.name.clone(), entry.shape.clone(), data)?;
        }
        let kind: ModelKind = manifest.kind.parse().map_err(|_| archive_err("unknown model kind"))?;
        let experts = store.experts(&manifest.expert, manifest.hyper.components)?;
        let model = match kind {
            ModelKind::Patch => {
                let (shape, f) = store.take("filters")?;
                let [a, j] = shape[..] else {
                    return Err(archive_err("filters must be two-dimensional"));
                };
                let side = (a as f64).sqrt().round() as usize;
                if side * side != a {
                    return Err(archive_err("filter length is not a square"));
                }
                let k = DMatrix::from_row_slice(a, j, &f);
                Model::Patch(PatchModel::new(side, k, experts)?)
            }
            ModelKind::Wavelet => {
                let (_, h) = store.take("h")?;
                let (_, lambdas) = store.take("lambdas")?;
                let (_, mu) = store.take("multipliers")?;
                if mu.len() != 2 + h.len() / 2 {
                    return Err(archive_err("multiplier count does not match the filter length"));
                }
                let levels = lambdas.len() / 3;
                let mut m = WaveletModel::new(h, levels, lambdas, experts)?;
                m.set_multipliers(LagrangeMultipliers {
                    scal: mu[0],
                    adm: mu[1],
                    orth: mu[2..].to_vec(),
                });
                Model::Wavelet(m)
            }
            ModelKind::Shearlet => {
                let (_, h1) = store.take("h1")?;
                let (_, p) = store.take("P")?;
                let (_, lambdas) = store.take("lambdas")?;
                let scales = lambdas.len() / 10;
                let params = ShearletParams { h1, p, scales, lambdas };
                Model::Shearlet(ShearletModel::new(params, experts)?)
            }
        };
        model.validate()?;
        let optimizer = match (store.take_opt("opt_m"), store.take_opt("opt_s")) {
            (Some(m), Some(s)) => {
                if m.len() != model.n_params() || s.len() != model.n_params() {
                    return Err(archive_err("optimizer state does not match the model"));
                }
                Some(OptimizerState {
                    step: manifest.training.as_ref().map_or(0, |t| t.steps),
                    m,
                    s,
                })
            }
            (None, None) => None,
            _ => return Err(archive_err("incomplete optimizer state")),
        };
        if let Some(extra) = store.leftover() {
            return Err(archive_err(format!("unexpected tensor '{extra}' for a {kind} model")));
        }
        Ok(Self {
            model,
            training: manifest.training,
            optimizer,
        })
    }
}

#[derive(Default)]
struct TensorStore {
    items: Vec<(String, Vec<usize>, Vec<f64>)>,
}

impl TensorStore {
    fn put(&mut self, name: String, shape: Vec<usize>, data: Vec<f64>) -> Result<()> {
        if self.items.iter().any(|(n, _, _)| *n == name) {
            return Err(archive_err(format!("duplicate tensor '{name}'")));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(archive_err(format!("tensor '{name}' has non-finite entries")));
        }
        self.items.push((name, shape, data));
        Ok(())
    }

    fn take_opt(&mut self, name: &str) -> Option<Vec<f64>> {
        let i = self.items.iter().position(|(n, _, _)| n == name)?;
        Some(self.items.remove(i).2)
    }

    fn take(&mut self, name: &str) -> Result<(Vec<usize>, Vec<f64>)> {
        let i = self
            .items
            .iter()
            .position(|(n, _, _)| n == name)
            .ok_or_else(|| archive_err(format!("missing tensor '{name}'")))?;
        let (_, shape, data) = self.items.remove(i);
        Ok((shape, data))
    }

    fn leftover(&self) -> Option<&str> {
        self.items.first().map(|(n, _, _)| n.as_str())
    }

    fn experts(&mut self, family: &str, components: Option<usize>) -> Result<Vec<Expert>> {
        let (shape, w) = self.take("weights")?;
        let [n, np] = shape[..] else {
            return Err(archive_err("weights must be two-dimensional"));
        };
        match family {
            "gmm" => {
                let (_, eta) = self.take("eta")?;
                let (_, sigma0) = self.take("sigma0")?;
                if eta.len() != n || sigma0.len() != n {
                    return Err(archive_err("one eta and sigma0 per expert expected"));
                }
                let comps = components.ok_or_else(|| archive_err("manifest lacks the component count"))?;
                if comps.div_ceil(2) != np {
                    return Err(archive_err(format!("{comps} components need {} stored weights, found {np}", comps.div_ceil(2))));
                }
                (0..n)
                    .map(|i| {
                        let half = w[i * np..(i + 1) * np].to_vec();
                        GmmExpert::from_stored(comps, eta[i], sigma0[i], half).map(Expert::Gmm)
                    })
                    .collect()
            }
            "gsm" => {
                let (_, z) = self.take("scales")?;
                if z.len() != n * np {
                    return Err(archive_err("scales must match the weights"));
                }
                (0..n)
                    .map(|i| {
                        let r = i * np..(i + 1) * np;
                        GsmExpert::from_stored(z[r.clone()].to_vec(), w[r].to_vec()).map(Expert::Gsm)
                    })
                    .collect()
            }
            other => Err(archive_err(format!("unknown expert family '{other}'"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Image;
    use crate::training::{ExpertKind, TrainConfig};

    fn models() -> Vec<Model> {
        let mut out = Vec::new();
        for kind in [ModelKind::Patch, ModelKind::Wavelet, ModelKind::Shearlet] {
            let mut c = TrainConfig::for_kind(kind);
            c.components = 9;
            out.push(c.init_model().unwrap());
        }
        let mut c = TrainConfig::for_kind(ModelKind::Patch);
        c.expert = ExpertKind::Gsm;
        c.gsm_scales = 6;
        out.push(c.init_model().unwrap());
        out
    }

    #[test]
    fn round_trip_is_byte_identical() {
        for m in models() {
            let mut a = ModelArchive::new(m.clone());
            let n = m.n_params();
            a.optimizer = Some(OptimizerState {
                step: 4,
                m: (0..n).map(|i| i as f64 * 1e-3).collect(),
                s: vec![0.5; n],
            });
            a.training = Some(TrainingMeta {
                seed: 1,
                steps: 4,
                config_hash: "00".into(),
                config: "[train]\n".into(),
            });
            let b1 = a.to_bytes().unwrap();
            let back = ModelArchive::from_bytes(&b1).unwrap();
            assert_eq!(back.model.flat_params(), m.flat_params(), "{}", m.kind());
            assert_eq!(back.optimizer.as_ref().unwrap().step, 4);
            assert_eq!(back.to_bytes().unwrap(), b1);
            let y = Image::from_fn(16, 16, |r, c| ((r * 3 + c) % 7) as f64 / 7.0);
            assert_eq!(back.model.score(&y, 0.01).unwrap(), m.score(&y, 0.01).unwrap());
        }
    }

    fn rewrite(bytes: &[u8], edit: impl Fn(&str, Vec<u8>) -> Option<Vec<u8>>, extra: Option<(&str, Vec<u8>)>) -> Vec<u8> {
        let mut src = ZipArchive::new(Cursor::new(bytes)).unwrap();
        let mut w = ZipWriter::new(Cursor::new(Vec::new()));
        for i in 0..src.len() {
            let mut f = src.by_index(i).unwrap();
            let name = f.name().unwrap().into_owned();
            let mut data = Vec::new();
            f.read_to_end(&mut data).unwrap();
            if let Some(d) = edit(&name, data) {
                w.start_file(name, SimpleFileOptions::default()).unwrap();
                w.write_all(&d).unwrap();
            }
        }
        if let Some((name, d)) = extra {
            w.start_file(name, SimpleFileOptions::default()).unwrap();
            w.write_all(&d).unwrap();
        }
        w.finish().unwrap().into_inner()
    }

    #[test]
    fn tampered_archives_are_rejected() {
        let m = models().remove(0);
        let good = ModelArchive::new(m).to_bytes().unwrap();
        // unlisted entry
        let extra = rewrite(&good, |_, d| Some(d), Some(("tensors/junk.f64", vec![0; 8])));
        assert!(matches!(ModelArchive::from_bytes(&extra), Err(Error::Archive(_))));
        // missing tensor
        let missing = rewrite(&good, |n, d| (n != "tensors/eta.f64").then_some(d), None);
        assert!(ModelArchive::from_bytes(&missing).is_err());
        // truncated tensor
        let short = rewrite(&good, |n, mut d| {
            if n == "tensors/filters.f64" {
                d.truncate(16);
            }
            Some(d)
        }, None);
        assert!(ModelArchive::from_bytes(&short).is_err());
        // weights off the simplex
        let bad = rewrite(&good, |n, d| {
            Some(if n == "tensors/weights.f64" { d.iter().map(|_| 0u8).collect() } else { d })
        }, None);
        assert!(ModelArchive::from_bytes(&bad).is_err());
        // non-orthogonal filters
        let skew = rewrite(&good, |n, d| {
            Some(if n == "tensors/filters.f64" { 1.0f64.to_le_bytes().repeat(d.len() / 8) } else { d })
        }, None);
        assert!(ModelArchive::from_bytes(&skew).is_err());
        assert!(ModelArchive::from_bytes(b"not a zip").is_err());
    }
}
