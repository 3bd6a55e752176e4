use std::fmt::Write as _;
use std::str::FromStr;

use crate::decoder::DecoderConfig;
use crate::error::{Error, Result};

use super::loss::LossConfig;
use super::optim::AdamWConfig;

/// Everything a training run depends on. Serialises to a flat
/// `key = value` text file.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub decoder: DecoderConfig,
    pub loss: LossConfig,
    pub optim: AdamWConfig,
    pub image_size: usize,
    pub train_samples: usize,
    pub val_samples: usize,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop once validation mean DICE reaches this value.
    pub target_dice: Option<f64>,
    pub augment: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    /// The desk-scale synthetic task.
    fn default() -> Self {
        TrainConfig {
            decoder: DecoderConfig {
                stage_channels: [64, 40, 16, 8],
                k: 9,
                classes: 3,
                ..DecoderConfig::default()
            },
            loss: LossConfig::default(),
            optim: AdamWConfig {
                lr: 3e-3,
                ..AdamWConfig::default()
            },
            image_size: 64,
            train_samples: 200,
            val_samples: 50,
            batch_size: 8,
            epochs: 200,
            target_dice: None,
            augment: true,
            seed: 0,
        }
    }
}

fn list<T: ToString>(v: &[T]) -> String {
    v.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref()
        .map_or_else(|| "none".to_string(), ToString::to_string)
}

fn parse<T: FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config {
        line,
        msg: format!("invalid value '{v}' for {key}"),
    })
}

fn parse_list<T: FromStr + Copy + Default, const N: usize>(
    line: usize,
    key: &str,
    v: &str,
) -> Result<[T; N]> {
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    if parts.len() != N {
        return Err(Error::Config {
            line,
            msg: format!(
                "{key} needs {N} comma-separated values, got {}",
                parts.len()
            ),
        });
    }
    let mut out = [T::default(); N];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = parse(line, key, p)?;
    }
    Ok(out)
}

fn parse_opt<T: FromStr>(line: usize, key: &str, v: &str) -> Result<Option<T>> {
    if v.eq_ignore_ascii_case("none") {
        Ok(None)
    } else {
        parse(line, key, v).map(Some)
    }
}

fn parse_bool(line: usize, key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::Config {
            line,
            msg: format!("invalid boolean '{v}' for {key}"),
        }),
    }
}

fn typed<T, E: std::fmt::Display>(line: usize, r: std::result::Result<T, E>) -> Result<T> {
    r.map_err(|e| Error::Config {
        line,
        msg: e.to_string(),
    })
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.decoder.validate()?;
        self.loss.validate()?;
        self.optim.validate()?;
        if !self.image_size.is_multiple_of(32) || self.image_size == 0 {
            return Err(Error::InvalidArgument(format!(
                "image_size {} must be a positive multiple of 32",
                self.image_size
            )));
        }
        if self.batch_size == 0 || self.train_samples == 0 || self.val_samples == 0 {
            return Err(Error::InvalidArgument(
                "batch_size and sample counts must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Flat `key = value` text, one key per line.
    pub fn to_text(&self) -> String {
        let d = &self.decoder;
        let l = &self.loss;
        let o = &self.optim;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("stage_channels", list(&d.stage_channels));
        kv("k", d.k.to_string());
        kv("dilations", list(&d.dilations));
        kv("reductions", list(&d.reductions));
        kv("variant", d.variant.to_string());
        kv("aggregation", d.aggregation.to_string());
        kv("classes", d.classes.to_string());
        kv("spa_kernel", d.spa_kernel.to_string());
        kv("head_weights", list(&d.head_weights));
        kv("upsample", d.upsample.to_string());
        kv("use_gcb", d.use_gcb.to_string());
        kv("use_spa", d.use_spa.to_string());
        kv("gcam_order", d.gcam_order.to_string());
        kv("loss", l.kind.to_string());
        kv("ce_weight", l.ce_weight.to_string());
        kv("dice_weight", l.dice_weight.to_string());
        kv("boundary_weighting", l.boundary_weighting.to_string());
        kv("mutation", l.mutation.to_string());
        kv("smooth", l.smooth.to_string());
        kv("lr", o.lr.to_string());
        kv("weight_decay", o.weight_decay.to_string());
        kv("beta1", o.beta1.to_string());
        kv("beta2", o.beta2.to_string());
        kv("eps", o.eps.to_string());
        kv("grad_clip", opt(&o.grad_clip));
        kv("image_size", self.image_size.to_string());
        kv("train_samples", self.train_samples.to_string());
        kv("val_samples", self.val_samples.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("epochs", self.epochs.to_string());
        kv("target_dice", opt(&self.target_dice));
        kv("augment", self.augment.to_string());
        kv("seed", self.seed.to_string());
        s
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, line: usize, key: &str, v: &str) -> Result<()> {
        let d = &mut self.decoder;
        let l = &mut self.loss;
        let o = &mut self.optim;
        match key {
            "stage_channels" => d.stage_channels = parse_list(line, key, v)?,
            "k" => d.k = parse(line, key, v)?,
            "dilations" => d.dilations = parse_list(line, key, v)?,
            "reductions" => d.reductions = parse_list(line, key, v)?,
            "variant" => d.variant = typed(line, v.parse())?,
            "aggregation" => d.aggregation = typed(line, v.parse())?,
            "classes" => d.classes = parse(line, key, v)?,
            "spa_kernel" => d.spa_kernel = parse(line, key, v)?,
            "head_weights" => d.head_weights = parse_list(line, key, v)?,
            "upsample" => d.upsample = typed(line, v.parse())?,
            "use_gcb" => d.use_gcb = parse_bool(line, key, v)?,
            "use_spa" => d.use_spa = parse_bool(line, key, v)?,
            "gcam_order" => d.gcam_order = typed(line, v.parse())?,
            "loss" => l.kind = typed(line, v.parse())?,
            "ce_weight" => l.ce_weight = parse(line, key, v)?,
            "dice_weight" => l.dice_weight = parse(line, key, v)?,
            "boundary_weighting" => l.boundary_weighting = parse_bool(line, key, v)?,
            "mutation" => l.mutation = parse_bool(line, key, v)?,
            "smooth" => l.smooth = parse(line, key, v)?,
            "lr" => o.lr = parse(line, key, v)?,
            "weight_decay" => o.weight_decay = parse(line, key, v)?,
            "beta1" => o.beta1 = parse(line, key, v)?,
            "beta2" => o.beta2 = parse(line, key, v)?,
            "eps" => o.eps = parse(line, key, v)?,
            "grad_clip" => o.grad_clip = parse_opt(line, key, v)?,
            "image_size" => self.image_size = parse(line, key, v)?,
            "train_samples" => self.train_samples = parse(line, key, v)?,
            "val_samples" => self.val_samples = parse(line, key, v)?,
            "batch_size" => self.batch_size = parse(line, key, v)?,
            "epochs" => self.epochs = parse(line, key, v)?,
            "target_dice" => self.target_dice = parse_opt(line, key, v)?,
            "augment" => self.augment = parse_bool(line, key, v)?,
            "seed" => self.seed = parse(line, key, v)?,
            _ => {
                return Err(Error::Config {
                    line,
                    msg: format!("unknown key '{key}'"),
                })
            }
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults. Blank lines and lines
    /// starting with `#` are ignored.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (key, value, line) in entries(text)? {
            cfg.set(line, &key, &value)?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::parse_text(&std::fs::read_to_string(path)?)
    }
}

/// `(key, value, line number)` triples of a flat config text.
pub fn entries(text: &str) -> Result<Vec<(String, String, usize)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let t = raw.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let (k, v) = t.split_once('=').ok_or_else(|| Error::Config {
            line,
            msg: format!("expected 'key = value', got '{t}'"),
        })?;
        out.push((k.trim().to_string(), v.trim().to_string(), line));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::Aggregation;
    use crate::graph_conv::GraphConvVariant;

    #[test]
    fn text_roundtrip() {
        let mut cfg = TrainConfig::default();
        cfg.decoder.variant = GraphConvVariant::Sage;
        cfg.decoder.aggregation = Aggregation::Concat;
        cfg.optim.lr = 0.1 + 0.2;
        cfg.optim.grad_clip = None;
        cfg.target_dice = Some(92.5);
        let back = TrainConfig::parse_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn comments_and_overrides() {
        let cfg = TrainConfig::parse_text("# run\n\nk = 5\nuse_gcb = off\n").unwrap();
        assert_eq!(cfg.decoder.k, 5);
        assert!(!cfg.decoder.use_gcb);
    }

    #[test]
    fn errors_name_the_line() {
        match TrainConfig::parse_text("k = 3\nbogus = 1\n") {
            Err(Error::Config { line: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        match TrainConfig::parse_text("stage_channels = 1,2\n") {
            Err(Error::Config { line: 1, msg }) => assert!(msg.contains("4 comma-separated")),
            other => panic!("unexpected {other:?}"),
        }
        assert!(TrainConfig::parse_text("variant = nope").is_err());
        assert!(TrainConfig::parse_text("just text").is_err());
    }
}
