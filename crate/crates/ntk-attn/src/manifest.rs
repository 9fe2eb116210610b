//! JSON manifests that tie named `mtxt` files into models and datasets.
//!
//! File names inside a manifest are resolved relative to the manifest's
//! own directory.

use std::fs;
use std::path::{Path, PathBuf};

use ntk_attn_core::feature_map::{FeatureKind, FeatureMapSpec, ScaleMode};
use ntk_attn_core::stylized::{Dataset, StylizedModel};
use ntk_attn_core::{DenseMatrix, NtkAttnModel, PrefixModel};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::IoError;
use crate::mtxt;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrefixManifest {
    pub d: usize,
    pub m: usize,
    pub files: PrefixFiles,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrefixFiles {
    pub w_q: String,
    pub w_k: String,
    pub w_v: String,
    pub prefix_p: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureMapJson {
    pub kind: String,
    pub g: usize,
    pub scale_mode: String,
}

impl FeatureMapJson {
    pub fn from_spec(spec: &FeatureMapSpec) -> Self {
        Self { kind: spec.kind.to_string(), g: spec.order, scale_mode: spec.scale_mode.to_string() }
    }

    pub fn to_spec(&self, d: usize) -> Result<FeatureMapSpec, ntk_attn_core::Error> {
        let kind: FeatureKind = self.kind.parse()?;
        let mode: ScaleMode = self.scale_mode.parse()?;
        Ok(match kind {
            FeatureKind::FirstOrder => FeatureMapSpec::first_order(d),
            FeatureKind::Taylor => FeatureMapSpec::taylor(d, self.g, mode),
            FeatureKind::TaylorCompact => FeatureMapSpec::taylor_compact(d, self.g, mode),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NtkManifest {
    pub d: usize,
    pub feature_map: FeatureMapJson,
    pub files: NtkFiles,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NtkFiles {
    pub w_q: String,
    pub w_k: String,
    pub w_v: String,
    pub z: String,
    pub k_vec: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub n: usize,
    pub d: usize,
    pub files: DatasetFiles,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetFiles {
    pub x: String,
    pub y: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StylizedManifest {
    pub d: usize,
    pub m: usize,
    pub sigma: f64,
    pub files: StylizedFiles,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StylizedFiles {
    pub w: String,
    /// Output signs as a `1 × m` matrix.
    pub a: String,
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path).map_err(|e| IoError::Io { path: path.to_path_buf(), source: e })?;
    serde_json::from_str(&text).map_err(|e| IoError::json(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(value).expect("manifest serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| IoError::Io { path: path.to_path_buf(), source: e })
}

fn base_dir(manifest: &Path) -> PathBuf {
    manifest.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn load_sized(dir: &Path, name: &str, rows: usize, cols: usize, manifest: &Path) -> Result<DenseMatrix, IoError> {
    let path = dir.join(name);
    let m = mtxt::read(&path)?;
    if m.shape() != (rows, cols) {
        return Err(IoError::Manifest {
            file: manifest.to_path_buf(),
            msg: format!("{} is {}x{}, expected {rows}x{cols}", path.display(), m.rows(), m.cols()),
        });
    }
    Ok(m)
}

/// Writes `<stem>.json` plus one `<stem>.<field>.mtxt` per matrix into `dir`; returns the manifest path.
pub fn save_prefix_model(dir: &Path, stem: &str, model: &PrefixModel) -> Result<PathBuf, IoError> {
    let name = |field: &str| format!("{stem}.{field}.mtxt");
    let files = PrefixFiles { w_q: name("w_q"), w_k: name("w_k"), w_v: name("w_v"), prefix_p: name("prefix_p") };
    mtxt::write(&dir.join(&files.w_q), &model.w_q)?;
    mtxt::write(&dir.join(&files.w_k), &model.w_k)?;
    mtxt::write(&dir.join(&files.w_v), &model.w_v)?;
    mtxt::write(&dir.join(&files.prefix_p), &model.prefix_p)?;
    let path = dir.join(format!("{stem}.json"));
    write_json(&path, &PrefixManifest { d: model.d(), m: model.m(), files })?;
    Ok(path)
}

pub fn load_prefix_model(path: &Path) -> Result<PrefixModel, IoError> {
    let man: PrefixManifest = read_json(path)?;
    let dir = base_dir(path);
    let d = man.d;
    Ok(PrefixModel::new(
        load_sized(&dir, &man.files.w_q, d, d, path)?,
        load_sized(&dir, &man.files.w_k, d, d, path)?,
        load_sized(&dir, &man.files.w_v, d, d, path)?,
        load_sized(&dir, &man.files.prefix_p, man.m, d, path)?,
    )?)
}

pub fn save_ntk_model(dir: &Path, stem: &str, model: &NtkAttnModel) -> Result<PathBuf, IoError> {
    let name = |field: &str| format!("{stem}.{field}.mtxt");
    let files =
        NtkFiles { w_q: name("w_q"), w_k: name("w_k"), w_v: name("w_v"), z: name("z"), k_vec: name("k_vec") };
    mtxt::write(&dir.join(&files.w_q), &model.w_q)?;
    mtxt::write(&dir.join(&files.w_k), &model.w_k)?;
    mtxt::write(&dir.join(&files.w_v), &model.w_v)?;
    mtxt::write(&dir.join(&files.z), &model.z)?;
    mtxt::write(&dir.join(&files.k_vec), &DenseMatrix::row_vector(&model.k_vec))?;
    let path = dir.join(format!("{stem}.json"));
    let man = NtkManifest { d: model.d(), feature_map: FeatureMapJson::from_spec(&model.feature_map), files };
    write_json(&path, &man)?;
    Ok(path)
}

pub fn load_ntk_model(path: &Path) -> Result<NtkAttnModel, IoError> {
    let man: NtkManifest = read_json(path)?;
    let dir = base_dir(path);
    let d = man.d;
    let spec = man.feature_map.to_spec(d)?;
    let r = spec.output_dim()?;
    let k = load_sized(&dir, &man.files.k_vec, 1, r, path)?;
    Ok(NtkAttnModel::new(
        load_sized(&dir, &man.files.w_q, d, d, path)?,
        load_sized(&dir, &man.files.w_k, d, d, path)?,
        load_sized(&dir, &man.files.w_v, d, d, path)?,
        load_sized(&dir, &man.files.z, r, d, path)?,
        k.into_data(),
        spec,
    )?)
}

pub fn save_dataset(dir: &Path, stem: &str, data: &Dataset) -> Result<PathBuf, IoError> {
    let files = DatasetFiles { x: format!("{stem}.x.mtxt"), y: format!("{stem}.y.mtxt") };
    mtxt::write(&dir.join(&files.x), &data.xs)?;
    mtxt::write(&dir.join(&files.y), &data.ys)?;
    let path = dir.join(format!("{stem}.json"));
    write_json(&path, &DatasetManifest { n: data.n(), d: data.d(), files })?;
    Ok(path)
}

pub fn load_dataset(path: &Path) -> Result<Dataset, IoError> {
    let man: DatasetManifest = read_json(path)?;
    let dir = base_dir(path);
    Ok(Dataset::new(
        load_sized(&dir, &man.files.x, man.n, man.d, path)?,
        load_sized(&dir, &man.files.y, man.n, man.d, path)?,
    )?)
}

pub fn save_stylized_model(dir: &Path, stem: &str, model: &StylizedModel) -> Result<PathBuf, IoError> {
    let files = StylizedFiles { w: format!("{stem}.w.mtxt"), a: format!("{stem}.a.mtxt") };
    mtxt::write(&dir.join(&files.w), &model.w)?;
    mtxt::write(&dir.join(&files.a), &DenseMatrix::row_vector(model.signs()))?;
    let path = dir.join(format!("{stem}.json"));
    write_json(&path, &StylizedManifest { d: model.d(), m: model.m(), sigma: model.sigma(), files })?;
    Ok(path)
}

pub fn load_stylized_model(path: &Path) -> Result<StylizedModel, IoError> {
    let man: StylizedManifest = read_json(path)?;
    let dir = base_dir(path);
    let w = load_sized(&dir, &man.files.w, man.d, man.m, path)?;
    let a = load_sized(&dir, &man.files.a, 1, man.m, path)?;
    Ok(StylizedModel::new(w, a.into_data(), man.sigma)?)
}
