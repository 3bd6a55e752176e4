//! On-disk layout of a synthetic dataset:
//!
//! ```text
//! DIR/meta.txt                 key = value (size, classes, seed, train, val)
//! DIR/{train,val}/images/NNNNN.gten
//! DIR/{train,val}/masks/NNNNN.pgm
//! ```

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use gcascade::metrics::LabelMask;
use gcascade::training::{entries, make_synth_range, Splits, SynthSample};
use gcascade::{gten, Scalar};

pub const META: &str = "meta.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Meta {
    pub size: usize,
    pub classes: usize,
    pub seed: u64,
    pub train: usize,
    pub val: usize,
}

impl Meta {
    pub fn to_text(self) -> String {
        format!(
            "size = {}\nclasses = {}\nseed = {}\ntrain = {}\nval = {}\n",
            self.size, self.classes, self.seed, self.train, self.val
        )
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let mut vals = [None; 5];
        const KEYS: [&str; 5] = ["size", "classes", "seed", "train", "val"];
        for (k, v, line) in entries(text)? {
            let slot = KEYS
                .iter()
                .position(|&x| x == k)
                .with_context(|| format!("{META} line {line}: unknown key '{k}'"))?;
            vals[slot] = Some(
                v.parse::<u64>()
                    .with_context(|| format!("{META} line {line}: invalid value '{v}'"))?,
            );
        }
        let get = |i: usize| vals[i].with_context(|| format!("{META} lacks {}", KEYS[i]));
        Ok(Meta {
            size: get(0)? as usize,
            classes: get(1)? as usize,
            seed: get(2)?,
            train: get(3)? as usize,
            val: get(4)? as usize,
        })
    }
}

fn write_split<T: Scalar>(dir: &Path, samples: &[SynthSample<T>]) -> Result<()> {
    fs::create_dir_all(dir.join("images"))?;
    fs::create_dir_all(dir.join("masks"))?;
    for (i, s) in samples.iter().enumerate() {
        gten::write(dir.join("images").join(format!("{i:05}.gten")), &s.image)?;
        s.mask
            .write_pgm(dir.join("masks").join(format!("{i:05}.pgm")))?;
    }
    Ok(())
}

fn read_split<T: Scalar>(dir: &Path, n: usize) -> Result<Vec<SynthSample<T>>> {
    (0..n)
        .map(|i| {
            let image_path = dir.join("images").join(format!("{i:05}.gten"));
            let mask_path = dir.join("masks").join(format!("{i:05}.pgm"));
            let image = gten::read(&image_path)
                .with_context(|| format!("reading {}", image_path.display()))?;
            let mask = LabelMask::read_pgm(&mask_path)
                .with_context(|| format!("reading {}", mask_path.display()))?;
            Ok(SynthSample { image, mask })
        })
        .collect()
}

/// Generates the train and validation splits (validation indices follow
/// the training ones) and writes them under `dir`.
pub fn write_dataset<T: Scalar>(dir: &Path, meta: Meta) -> Result<()> {
    let train = make_synth_range::<T>(0, meta.train, meta.size, meta.classes, meta.seed)?;
    let val = make_synth_range::<T>(
        meta.train as u64,
        meta.val,
        meta.size,
        meta.classes,
        meta.seed,
    )?;
    fs::create_dir_all(dir)?;
    write_split(&dir.join("train"), &train)?;
    write_split(&dir.join("val"), &val)?;
    fs::write(dir.join(META), meta.to_text())?;
    Ok(())
}

pub fn read_dataset<T: Scalar>(dir: &Path) -> Result<(Meta, Splits<T>)> {
    let meta_path = dir.join(META);
    let meta = Meta::parse_text(
        &fs::read_to_string(&meta_path)
            .with_context(|| format!("reading {}", meta_path.display()))?,
    )?;
    let train = read_split(&dir.join("train"), meta.train)?;
    let val = read_split(&dir.join("val"), meta.val)?;
    for s in train.iter().chain(&val) {
        if s.mask.h != meta.size || s.mask.w != meta.size {
            bail!(
                "dataset sample of {}x{} does not match size {}",
                s.mask.h,
                s.mask.w,
                meta.size
            );
        }
        s.mask.check_classes(meta.classes)?;
    }
    Ok((meta, (train, val)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use gcascade::training::synth_splits;
    use gcascade::training::TrainConfig;

    #[test]
    fn meta_round_trips() {
        let m = Meta {
            size: 64,
            classes: 3,
            seed: 7,
            train: 5,
            val: 2,
        };
        assert_eq!(Meta::parse_text(&m.to_text()).unwrap(), m);
        assert!(Meta::parse_text("size = 64\n").is_err());
        assert!(Meta::parse_text("bogus = 1\n").is_err());
    }

    #[test]
    fn written_dataset_matches_in_memory_splits() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig {
            train_samples: 3,
            val_samples: 2,
            seed: 5,
            ..TrainConfig::default()
        };
        let meta = Meta {
            size: cfg.image_size,
            classes: cfg.decoder.classes,
            seed: 5,
            train: 3,
            val: 2,
        };
        write_dataset::<f32>(dir.path(), meta).unwrap();
        let (read_meta, (train, val)) = read_dataset::<f32>(dir.path()).unwrap();
        assert_eq!(read_meta, meta);
        let (t, v) = synth_splits::<f32>(&cfg).unwrap();
        for (a, b) in train.iter().chain(&val).zip(t.iter().chain(&v)) {
            assert_eq!(a.image, b.image);
            assert_eq!(a.mask, b.mask);
        }
    }
}
