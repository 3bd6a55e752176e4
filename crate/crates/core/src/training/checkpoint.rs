use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::gten;
use crate::scalar::{DType, Scalar};

use super::config::{entries, TrainConfig};
use super::trainer::Trained;

pub const MANIFEST: &str = "manifest.txt";

/// Run metadata stored next to the tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub config: TrainConfig,
    pub epoch: usize,
    pub dtype: DType,
}

fn tensor_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.gten"))
}

fn dtype_name(d: DType) -> &'static str {
    match d {
        DType::F32 => "f32",
        DType::F64 => "f64",
    }
}

impl Manifest {
    pub fn to_text(&self) -> String {
        format!(
            "epoch = {}\nprecision = {}\n{}",
            self.epoch,
            dtype_name(self.dtype),
            self.config.to_text()
        )
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let mut config = TrainConfig::default();
        let (mut epoch, mut dtype) = (None, None);
        for (k, v, line) in entries(text)? {
            match k.as_str() {
                "epoch" => {
                    epoch = Some(v.parse().map_err(|_| Error::Config {
                        line,
                        msg: format!("invalid epoch '{v}'"),
                    })?)
                }
                "precision" => {
                    dtype = Some(match v.as_str() {
                        "f32" => DType::F32,
                        "f64" => DType::F64,
                        _ => {
                            return Err(Error::Config {
                                line,
                                msg: format!("invalid precision '{v}'"),
                            })
                        }
                    })
                }
                _ => config.set(line, &k, &v)?,
            }
        }
        let missing = |what: &str| Error::Format(format!("checkpoint manifest lacks {what}"));
        Ok(Manifest {
            config,
            epoch: epoch.ok_or_else(|| missing("epoch"))?,
            dtype: dtype.ok_or_else(|| missing("precision"))?,
        })
    }

    pub fn read(dir: impl AsRef<Path>) -> Result<Self> {
        Self::parse_text(&fs::read_to_string(dir.as_ref().join(MANIFEST))?)
    }
}

/// Writes every parameter and buffer as `<name>.gten` plus the manifest.
pub fn save_checkpoint<T: Scalar>(
    dir: impl AsRef<Path>,
    trained: &Trained<T>,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    for p in trained.store.params() {
        gten::write(tensor_path(dir, &p.name), &p.value)?;
    }
    for b in trained.store.buffers() {
        gten::write(tensor_path(dir, &b.name), &b.value)?;
    }
    let manifest = Manifest {
        config: cfg.clone(),
        epoch,
        dtype: T::DTYPE,
    };
    fs::write(dir.join(MANIFEST), manifest.to_text())?;
    Ok(())
}

/// Rebuilds the model described by the manifest and loads its tensors,
/// converting precision if needed.
pub fn load_checkpoint<T: Scalar>(dir: impl AsRef<Path>) -> Result<(Trained<T>, Manifest)> {
    let dir = dir.as_ref();
    let manifest = Manifest::read(dir)?;
    let mut trained = Trained::<T>::init(&manifest.config)?;
    for p in trained.store.params_mut() {
        let t = gten::read::<T>(tensor_path(dir, &p.name))?;
        if t.shape() != p.value.shape() {
            return Err(Error::Format(format!(
                "checkpoint tensor {} has shape {:?}, model expects {:?}",
                p.name,
                t.shape(),
                p.value.shape()
            )));
        }
        p.value = t;
    }
    for b in trained.store.buffers_mut() {
        let t = gten::read::<T>(tensor_path(dir, &b.name))?;
        if t.shape() != b.value.shape() {
            return Err(Error::Format(format!(
                "checkpoint buffer {} has shape {:?}",
                b.name,
                t.shape()
            )));
        }
        b.value = t;
    }
    Ok((trained, manifest))
}
