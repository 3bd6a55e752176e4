//! Central finite-difference checks of reverse-mode gradients, covering
//! every primitive tape operation and the assembled decoder.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::Var;
use crate::decoder::{DecoderConfig, GCascade, Gcam, GcamOrder, Segmenter, Spa, Ucb};
use crate::error::{Error, Result};
use crate::graph_conv::{build_knn_graph, Gcb, GraphConvVariant};
use crate::metrics::LabelMask;
use crate::nn::{Forward, Mode, ParamId, ParamStore};
use crate::ops::conv::ConvGeom;
use crate::ops::spatial::{ChannelReduce, UpsampleMode};
use crate::tensor::{Shape, Tensor};
use crate::training::{combined_loss_on_tape, mutation_loss, LossConfig, LossKind};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Denominator floor of the relative error, so entries whose true
    /// gradient is zero are judged on absolute error.
    pub floor: f64,
    /// Entries checked per tensor; tensors at most this large are checked
    /// exhaustively.
    pub samples_per_tensor: usize,
    /// Times the step is divided by ten when it crosses a kink.
    pub max_refinements: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-3,
            samples_per_tensor: 24,
            max_refinements: 2,
            seed: 0,
        }
    }
}

impl GradCheckConfig {
    /// `|a - n| / max(|a|, |n|, floor)`.
    pub fn relative_error(&self, analytic: f64, numeric: f64) -> f64 {
        (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(self.floor)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_err: f64,
    /// Where the worst entry was found, as `tensor[index]`.
    pub worst: String,
    pub entries: usize,
    /// Entries checked with a refined step.
    pub refined: usize,
    /// Entries still crossing a kink at the smallest step.
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub results: Vec<CheckResult>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.results
            .iter()
            .map(|r| r.max_rel_err)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.max_rel_err < self.tolerance)
    }

    pub fn failures(&self) -> Vec<&CheckResult> {
        self.results
            .iter()
            .filter(|r| r.max_rel_err >= self.tolerance)
            .collect()
    }
}

/// Checks the gradient of `sum(proj * build(store))` with respect to every
/// parameter of `store`, where `proj` is a fixed random projection (or 1
/// for a scalar output). Inputs are registered as parameters too.
pub fn check_module(
    name: &str,
    store: &mut ParamStore<f64>,
    mode: Mode,
    cfg: &GradCheckConfig,
    build: impl Fn(&mut Forward<'_, f64>) -> Result<Var>,
) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9);
    let (proj, graphs) = {
        let mut f = Forward::new(store, mode);
        let out = build(&mut f)?;
        let s = f.tape.shape(out);
        let proj = if s.numel() == 1 {
            Tensor::ones(s)
        } else {
            Tensor::randn(s, 1.0, &mut rng)
        };
        (proj, f.graphs().to_vec())
    };
    // neighbour selection is piecewise constant, so graphs stay fixed
    let eval = |store: &mut ParamStore<f64>| -> Result<(f64, u64)> {
        let mut f = Forward::new(store, mode);
        f.freeze_graphs(graphs.clone());
        let out = build(&mut f)?;
        let loss = f.tape.dot_const(out, proj.clone())?;
        Ok((f.tape.value(loss).item(), f.tape.branch_signature()))
    };

    let mut f = Forward::new(store, mode);
    f.freeze_graphs(graphs.clone());
    let out = build(&mut f)?;
    let loss = f.tape.dot_const(out, proj.clone())?;
    let base_sig = f.tape.branch_signature();
    let (tape, binding) = f.finish();
    let grads = tape.backward(loss)?;
    store.load_grads(&binding, &grads);

    let mut result = CheckResult {
        name: name.to_string(),
        max_rel_err: 0.0,
        worst: String::new(),
        entries: 0,
        refined: 0,
        skipped: 0,
    };
    for p in 0..store.params().len() {
        let numel = store.params()[p].value.numel();
        let picks: Vec<usize> = if numel <= cfg.samples_per_tensor {
            (0..numel).collect()
        } else {
            let mut v = sample(&mut rng, numel, cfg.samples_per_tensor).into_vec();
            v.sort_unstable();
            v
        };
        for i in picks {
            let analytic = store.params()[p].grad.data()[i];
            let orig = store.params()[p].value.data()[i];
            // a step that crosses a kink is shrunk until both sides stay on
            // the base point's smooth piece
            let mut numeric = None;
            let mut step = cfg.step;
            for attempt in 0..=cfg.max_refinements {
                store.params_mut()[p].value.data_mut()[i] = orig + step;
                let (up, up_sig) = eval(store)?;
                store.params_mut()[p].value.data_mut()[i] = orig - step;
                let (down, down_sig) = eval(store)?;
                store.params_mut()[p].value.data_mut()[i] = orig;
                if up_sig == base_sig && down_sig == base_sig {
                    numeric = Some((up - down) / (2.0 * step));
                    if attempt > 0 {
                        result.refined += 1;
                    }
                    break;
                }
                step /= 10.0;
            }
            let Some(numeric) = numeric else {
                result.skipped += 1;
                continue;
            };
            let err = cfg.relative_error(analytic, numeric);
            if !err.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "{name}: non-finite gradient check value"
                )));
            }
            if err > result.max_rel_err || result.worst.is_empty() {
                result.max_rel_err = err.max(result.max_rel_err);
                result.worst = format!("{}[{i}]", store.params()[p].name);
            }
            result.entries += 1;
        }
    }
    Ok(result)
}

struct Inputs {
    store: ParamStore<f64>,
    ids: Vec<ParamId>,
}

fn inputs(rng: &mut ChaCha8Rng, shapes: &[Shape]) -> Result<Inputs> {
    let mut store = ParamStore::new();
    let ids = shapes
        .iter()
        .enumerate()
        .map(|(i, &s)| store.add_param(format!("input{i}"), Tensor::randn(s, 1.0, rng)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Inputs { store, ids })
}

type OpFn = Box<dyn Fn(&mut Forward<'_, f64>, &[Var]) -> Result<Var>>;

fn op_cases() -> Vec<(&'static str, Vec<Shape>, OpFn)> {
    let s = Shape::new;
    vec![
        (
            "conv2d 3x3 stride 1 pad 1",
            vec![s(2, 3, 5, 5), s(4, 3, 3, 3), s(1, 4, 1, 1)],
            Box::new(|f, v| f.tape.conv2d(v[0], v[1], Some(v[2]), ConvGeom::new(1, 1))),
        ),
        (
            "conv2d 3x3 stride 2 pad 1",
            vec![s(1, 2, 6, 6), s(3, 2, 3, 3)],
            Box::new(|f, v| f.tape.conv2d(v[0], v[1], None, ConvGeom::new(2, 1))),
        ),
        (
            "depthwise_conv2d",
            vec![s(2, 3, 4, 4), s(3, 1, 3, 3), s(1, 3, 1, 1)],
            Box::new(|f, v| f.tape.depthwise_conv2d(v[0], v[1], Some(v[2]), 1)),
        ),
        (
            "batchnorm2d train",
            vec![s(2, 3, 3, 3), s(1, 3, 1, 1), s(1, 3, 1, 1)],
            Box::new(|f, v| Ok(f.tape.batchnorm_train(v[0], v[1], v[2], 1e-5)?.0)),
        ),
        (
            "batchnorm2d eval",
            vec![s(2, 3, 3, 3), s(1, 3, 1, 1), s(1, 3, 1, 1)],
            Box::new(|f, v| {
                f.tape
                    .batchnorm_eval(v[0], v[1], v[2], &[0.5, -0.2, 0.1], &[1.5, 0.7, 2.0], 1e-5)
            }),
        ),
        (
            "relu",
            vec![s(1, 2, 4, 4)],
            Box::new(|f, v| Ok(f.tape.relu(v[0]))),
        ),
        (
            "gelu",
            vec![s(1, 2, 4, 4)],
            Box::new(|f, v| Ok(f.tape.gelu(v[0]))),
        ),
        (
            "sigmoid",
            vec![s(1, 2, 4, 4)],
            Box::new(|f, v| Ok(f.tape.sigmoid(v[0]))),
        ),
        (
            "softmax_channel",
            vec![s(2, 4, 3, 3)],
            Box::new(|f, v| Ok(f.tape.softmax_channel(v[0]))),
        ),
        (
            "upsample nearest",
            vec![s(1, 2, 3, 3)],
            Box::new(|f, v| f.tape.upsample(v[0], 2, UpsampleMode::Nearest)),
        ),
        (
            "upsample bilinear",
            vec![s(1, 2, 3, 4)],
            Box::new(|f, v| f.tape.upsample(v[0], 4, UpsampleMode::Bilinear)),
        ),
        (
            "channel_reduce max",
            vec![s(2, 3, 3, 3)],
            Box::new(|f, v| Ok(f.tape.channel_reduce(v[0], ChannelReduce::Max))),
        ),
        (
            "channel_reduce avg",
            vec![s(2, 3, 3, 3)],
            Box::new(|f, v| Ok(f.tape.channel_reduce(v[0], ChannelReduce::Avg))),
        ),
        (
            "add",
            vec![s(1, 2, 3, 3), s(1, 2, 3, 3)],
            Box::new(|f, v| f.tape.add(v[0], v[1])),
        ),
        (
            "sub",
            vec![s(1, 2, 3, 3), s(1, 2, 3, 3)],
            Box::new(|f, v| f.tape.sub(v[0], v[1])),
        ),
        (
            "hadamard",
            vec![s(1, 2, 3, 3), s(1, 2, 3, 3)],
            Box::new(|f, v| f.tape.hadamard(v[0], v[1])),
        ),
        (
            "mul_mask",
            vec![s(2, 3, 3, 3), s(2, 1, 3, 3)],
            Box::new(|f, v| f.tape.mul_mask(v[0], v[1])),
        ),
        (
            "concat_channel",
            vec![s(1, 2, 3, 3), s(1, 3, 3, 3)],
            Box::new(|f, v| f.tape.concat_channel(v[0], v[1])),
        ),
        (
            "avgpool2d",
            vec![s(1, 2, 4, 6)],
            Box::new(|f, v| f.tape.avgpool2d(v[0], 2)),
        ),
        (
            "scale",
            vec![s(1, 2, 3, 3)],
            Box::new(|f, v| Ok(f.tape.scale(v[0], -1.75))),
        ),
        (
            "one_plus_scale",
            vec![s(1, 2, 3, 3), Shape::scalar()],
            Box::new(|f, v| f.tape.one_plus_scale(v[0], v[1])),
        ),
        (
            "sum",
            vec![s(1, 2, 3, 3)],
            Box::new(|f, v| Ok(f.tape.sum(v[0]))),
        ),
        (
            "reshape",
            vec![s(1, 2, 3, 4)],
            Box::new(|f, v| f.tape.reshape(v[0], Shape::new(1, 6, 4, 1))),
        ),
        (
            "gather_max",
            vec![s(2, 3, 4, 4)],
            Box::new(|f, v| {
                let x = f.tape.value(v[0]).clone();
                let g = f.graph(|| build_knn_graph(&x, 3, 1, 2))?;
                let cand = f.tape.avgpool2d(v[0], 2)?;
                f.tape.gather_max(cand, &g)
            }),
        ),
        (
            "gather_sum",
            vec![s(2, 3, 4, 4)],
            Box::new(|f, v| {
                let x = f.tape.value(v[0]).clone();
                let g = f.graph(|| build_knn_graph(&x, 4, 2, 1))?;
                f.tape.gather_sum(v[0], &g)
            }),
        ),
        (
            "edge_features + max_last_axis",
            vec![s(1, 3, 4, 4)],
            Box::new(|f, v| {
                let x = f.tape.value(v[0]).clone();
                let g = f.graph(|| build_knn_graph(&x, 3, 1, 1))?;
                let e = f.tape.edge_features(v[0], v[0], &g)?;
                Ok(f.tape.max_last_axis(e))
            }),
        ),
        (
            "loss ce_dice",
            vec![s(2, 3, 4, 4)],
            Box::new(|f, v| {
                combined_loss_on_tape(&mut f.tape, v[0], &fixture_masks(3), &LossConfig::default())
            }),
        ),
        (
            "loss bce_iou weighted",
            vec![s(2, 1, 4, 4)],
            Box::new(|f, v| {
                let cfg = LossConfig {
                    kind: LossKind::BceIou,
                    ..LossConfig::default()
                };
                combined_loss_on_tape(&mut f.tape, v[0], &fixture_masks(2), &cfg)
            }),
        ),
        (
            "mutation loss",
            vec![s(2, 3, 4, 4), s(2, 3, 4, 4), s(2, 3, 4, 4), s(2, 3, 4, 4)],
            Box::new(|f, v| {
                Ok(mutation_loss(&mut f.tape, v, &fixture_masks(3), &LossConfig::default())?.0)
            }),
        ),
    ]
}

fn fixture_masks(classes: u8) -> Vec<LabelMask> {
    (0..2u8)
        .map(|n| LabelMask {
            h: 4,
            w: 4,
            data: (0..16u8).map(|i| (i / 3 + n) % classes).collect(),
        })
        .collect()
}

/// Every primitive op on small random inputs.
pub fn check_primitives(cfg: &GradCheckConfig) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::new();
    for (name, shapes, op) in op_cases() {
        let mut inp = inputs(&mut rng, &shapes)?;
        let ids = inp.ids.clone();
        let mode = if name.ends_with("eval") {
            Mode::Eval
        } else {
            Mode::Train
        };
        out.push(check_module(name, &mut inp.store, mode, cfg, |f| {
            let vars: Vec<Var> = ids.iter().map(|&id| f.param(id)).collect();
            op(f, &vars)
        })?);
    }
    Ok(out)
}

/// The toy decoder: pyramid channels `[64, 40, 16, 8]` for a 32x32 image.
pub fn toy_decoder_config(variant: GraphConvVariant) -> DecoderConfig {
    DecoderConfig {
        stage_channels: [64, 40, 16, 8],
        k: 9,
        classes: 3,
        variant,
        ..DecoderConfig::default()
    }
}

/// Moves normalisation affine parameters away from their `(1, 0)`
/// initialisation. With batch 2 and a single pixel, batch statistics map
/// every channel to almost exactly +-1, and the resulting channel-max ties
/// would sit inside the finite-difference step.
fn randomize_affine(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) {
    use rand::Rng;
    for p in store.params_mut() {
        let base = if p.name.ends_with(".gamma") {
            1.0
        } else if p.name.ends_with(".beta") {
            0.0
        } else {
            continue;
        };
        for v in p.value.data_mut() {
            *v = base + rng.gen_range(-0.5..0.5);
        }
    }
}

/// Batch of the full-decoder checks. The deepest stage is a single pixel,
/// so batch statistics come from this many values only.
pub const DECODER_BATCH: usize = 4;

/// Decoder blocks and the full cascade.
pub fn check_modules(cfg: &GradCheckConfig) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut out = Vec::new();

    for variant in GraphConvVariant::ALL {
        let mut store = ParamStore::new();
        let x = store.add_param("x", Tensor::randn(Shape::new(2, 6, 4, 4), 1.0, &mut rng))?;
        let gcb = Gcb::new(&mut store, "gcb", 6, variant, 3, 1, 2, &mut rng)?;
        randomize_affine(&mut store, &mut rng);
        out.push(check_module(
            &format!("gcb {variant}"),
            &mut store,
            Mode::Train,
            cfg,
            |f| {
                let xv = f.param(x);
                gcb.forward(f, xv)
            },
        )?);
    }

    {
        let mut store = ParamStore::new();
        let x = store.add_param("x", Tensor::randn(Shape::new(2, 4, 5, 5), 1.0, &mut rng))?;
        let spa = Spa::new(&mut store, "spa", 7, &mut rng)?;
        let gcam = Gcam::new(
            &mut store,
            "gcam",
            4,
            GraphConvVariant::MaxRelative,
            4,
            1,
            1,
            3,
            true,
            true,
            GcamOrder::SpaThenGcb,
            &mut rng,
        )?;
        randomize_affine(&mut store, &mut rng);
        out.push(check_module("spa", &mut store, Mode::Train, cfg, |f| {
            let xv = f.param(x);
            spa.forward(f, xv)
        })?);
        randomize_affine(&mut store, &mut rng);
        out.push(check_module(
            "gcam spa-gcb",
            &mut store,
            Mode::Train,
            cfg,
            |f| {
                let xv = f.param(x);
                gcam.forward(f, xv)
            },
        )?);
    }

    {
        let mut store = ParamStore::new();
        let x = store.add_param("x", Tensor::randn(Shape::new(2, 6, 3, 3), 1.0, &mut rng))?;
        let ucb = Ucb::new(&mut store, "ucb", 6, 4, UpsampleMode::Bilinear, &mut rng)?;
        randomize_affine(&mut store, &mut rng);
        out.push(check_module("ucb", &mut store, Mode::Train, cfg, |f| {
            let xv = f.param(x);
            ucb.forward(f, xv)
        })?);
    }

    for variant in GraphConvVariant::ALL {
        let dcfg = toy_decoder_config(variant);
        let mut store = ParamStore::new();
        let mut feats = Vec::new();
        for stage in (1..=4).rev() {
            let (c, h, w) = dcfg.feature_dims(stage, (32, 32));
            feats.push(store.add_param(
                format!("x{stage}"),
                Tensor::randn(Shape::new(DECODER_BATCH, c, h, w), 1.0, &mut rng),
            )?);
        }
        let dec = GCascade::new(&mut store, &dcfg, &mut rng)?;
        randomize_affine(&mut store, &mut rng);
        out.push(check_module(
            &format!("decoder {variant}"),
            &mut store,
            Mode::Train,
            cfg,
            |f| {
                let x = [
                    f.param(feats[0]),
                    f.param(feats[1]),
                    f.param(feats[2]),
                    f.param(feats[3]),
                ];
                Ok(dec.forward(f, x)?.aggregate)
            },
        )?);
    }

    {
        let dcfg = toy_decoder_config(GraphConvVariant::MaxRelative);
        let mut store = ParamStore::new();
        let image = store.add_param(
            "image",
            Tensor::randn(Shape::new(DECODER_BATCH, 3, 32, 32), 1.0, &mut rng),
        )?;
        let model = Segmenter::new(&mut store, &dcfg, &mut rng)?;
        let masks: Vec<LabelMask> = (0..DECODER_BATCH)
            .map(|n| LabelMask {
                h: 32,
                w: 32,
                data: (0..1024).map(|i| ((i / 64 + n) % 3) as u8).collect(),
            })
            .collect();
        randomize_affine(&mut store, &mut rng);
        out.push(check_module(
            "segmenter + mutation loss",
            &mut store,
            Mode::Train,
            cfg,
            |f| {
                let x = f.param(image);
                let p = model.forward(f, x)?;
                Ok(mutation_loss(&mut f.tape, &p.heads, &masks, &LossConfig::default())?.0)
            },
        )?);
    }
    Ok(out)
}

pub fn run_suite(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut results = check_primitives(cfg)?;
    results.extend(check_modules(cfg)?);
    Ok(GradCheckReport {
        tolerance: cfg.tolerance,
        results,
    })
}
