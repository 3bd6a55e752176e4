//! Closed-form parameter and FLOP accounting for the decoder.

use std::fmt::{self, Write as _};

use crate::decoder::{Aggregation, DecoderConfig, GcamOrder};
use crate::graph_conv::{effective_graph_size, GraphConvVariant};

/// How operations are turned into a FLOP count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlopConvention {
    /// FLOPs charged per multiply-accumulate.
    pub flops_per_mac: u64,
    /// Charge elementwise work (normalisation, activations, pooling,
    /// gathers, additions).
    pub elementwise: bool,
    /// Charge the pairwise-distance work of KNN graph construction.
    pub knn: bool,
}

impl FlopConvention {
    /// Multiply-accumulates of convolutions only, the usual profiler
    /// convention for published model tables.
    pub const MACS: FlopConvention = FlopConvention {
        flops_per_mac: 1,
        elementwise: false,
        knn: false,
    };

    /// Every operation: 2 FLOPs per MAC, 1 per element for normalisation
    /// and activations (2 for GELU), KNN distances included.
    pub const FULL: FlopConvention = FlopConvention {
        flops_per_mac: 2,
        elementwise: true,
        knn: true,
    };

    pub fn name(&self) -> &'static str {
        match *self {
            Self::MACS => "macs",
            Self::FULL => "full",
            _ => "custom",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "macs" => Some(Self::MACS),
            "full" => Some(Self::FULL),
            _ => None,
        }
    }
}

impl Default for FlopConvention {
    fn default() -> Self {
        Self::MACS
    }
}

impl fmt::Display for FlopConvention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} (flops/MAC={}, elementwise={}, knn={})",
            self.name(),
            self.flops_per_mac,
            if self.elementwise {
                "counted"
            } else {
                "ignored"
            },
            if self.knn { "counted" } else { "ignored" }
        )
    }
}

/// A node of the per-module breakdown. Inner nodes carry the sums of
/// their children.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComplexityNode {
    pub path: String,
    pub params: u64,
    pub flops: u64,
    pub children: Vec<ComplexityNode>,
}

impl ComplexityNode {
    fn leaf(path: String, params: u64, flops: u64) -> Self {
        ComplexityNode {
            path,
            params,
            flops,
            children: Vec::new(),
        }
    }

    fn group(path: String, children: Vec<ComplexityNode>) -> Self {
        ComplexityNode {
            params: children.iter().map(|c| c.params).sum(),
            flops: children.iter().map(|c| c.flops).sum(),
            path,
            children,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    /// Depth-first visit with depth.
    pub fn walk<'a>(&'a self, depth: usize, f: &mut impl FnMut(&'a ComplexityNode, usize)) {
        f(self, depth);
        for c in &self.children {
            c.walk(depth + 1, f);
        }
    }

    pub fn find(&self, path: &str) -> Option<&ComplexityNode> {
        if self.path == path {
            return Some(self);
        }
        self.children.iter().find_map(|c| c.find(path))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComplexityReport {
    pub input_hw: (usize, usize),
    pub convention: FlopConvention,
    pub root: ComplexityNode,
}

impl ComplexityReport {
    pub fn total_params(&self) -> u64 {
        self.root.params
    }

    pub fn total_flops(&self) -> u64 {
        self.root.flops
    }

    /// Sums over leaves, for checking the stored totals.
    pub fn leaf_sums(&self) -> (u64, u64) {
        let (mut p, mut f) = (0, 0);
        self.root.walk(0, &mut |n, _| {
            if n.is_leaf() {
                p += n.params;
                f += n.flops;
            }
        });
        (p, f)
    }

    pub fn header(&self) -> String {
        format!(
            "# input {}x{}, FLOP convention: {}",
            self.input_hw.0, self.input_hw.1, self.convention
        )
    }

    /// Aligned text table of every node, indented by depth.
    pub fn to_table(&self) -> String {
        let mut rows = Vec::new();
        self.root.walk(0, &mut |n, d| {
            let name = n.path.rsplit('.').next().unwrap_or(&n.path);
            let label = if d == 0 {
                n.path.clone()
            } else {
                format!("{}{}", "  ".repeat(d), name)
            };
            rows.push((label, n.params, n.flops));
        });
        let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(6).max(6);
        let mut s = String::new();
        let _ = writeln!(s, "{}", self.header());
        let _ = writeln!(s, "{:<width$}  {:>12}  {:>16}", "module", "params", "flops");
        for (label, p, f) in rows {
            let _ = writeln!(s, "{label:<width$}  {p:>12}  {f:>16}");
        }
        let _ = writeln!(
            s,
            "{:<width$}  {:>11.3}M  {:>15.3}G",
            "total",
            self.total_params() as f64 / 1e6,
            self.total_flops() as f64 / 1e9
        );
        s
    }

    /// `path,params,flops` for every node.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("path,params,flops\n");
        self.root.walk(0, &mut |n, _| {
            let _ = writeln!(s, "{},{},{}", n.path, n.params, n.flops);
        });
        s
    }
}

struct Counter {
    conv: FlopConvention,
}

impl Counter {
    fn macs(&self, m: u64) -> u64 {
        m * self.conv.flops_per_mac
    }

    fn elementwise(&self, n: u64) -> u64 {
        if self.conv.elementwise {
            n
        } else {
            0
        }
    }

    fn conv1x1(&self, path: String, cin: u64, cout: u64, pixels: u64) -> ComplexityNode {
        ComplexityNode::leaf(path, cout * cin + cout, self.macs(cin * cout * pixels))
    }

    fn bn(&self, path: String, c: u64, pixels: u64) -> ComplexityNode {
        ComplexityNode::leaf(path, 2 * c, self.elementwise(c * pixels))
    }

    fn act(&self, path: String, elems: u64, cost: u64) -> ComplexityNode {
        ComplexityNode::leaf(path, 0, self.elementwise(cost * elems))
    }

    fn gcb(
        &self,
        p: &str,
        cfg: &DecoderConfig,
        stage: usize,
        c: u64,
        h: usize,
        w: usize,
    ) -> ComplexityNode {
        let n = (h * w) as u64;
        let r = cfg.reduction(stage);
        let cand_hw = (h / r, w / r);
        let m = (cand_hw.0 * cand_hw.1) as u64;
        let (k, _) = effective_graph_size(cfg.k, cfg.dilation(stage), m as usize);
        let k = k as u64;
        let mut graph = Vec::new();
        if r > 1 {
            graph.push(ComplexityNode::leaf(
                format!("{p}.graph.pool"),
                0,
                self.elementwise(c * n),
            ));
        }
        // squared distances over features plus the two position coordinates
        let knn = if self.conv.knn {
            self.macs(n * m * (c + 2))
        } else {
            0
        };
        graph.push(ComplexityNode::leaf(format!("{p}.graph.knn"), 0, knn));
        let gather = self.elementwise(n * k * c);
        match cfg.variant {
            GraphConvVariant::MaxRelative => {
                graph.push(ComplexityNode::leaf(
                    format!("{p}.graph.aggregate"),
                    0,
                    gather + self.elementwise(n * c),
                ));
                graph.push(self.conv1x1(format!("{p}.graph.w"), 2 * c, c, n));
            }
            GraphConvVariant::Edge => {
                graph.push(ComplexityNode::leaf(
                    format!("{p}.graph.edges"),
                    0,
                    self.elementwise(n * k * c),
                ));
                graph.push(self.conv1x1(format!("{p}.graph.w"), 2 * c, c, n * k));
                graph.push(ComplexityNode::leaf(
                    format!("{p}.graph.aggregate"),
                    0,
                    gather,
                ));
            }
            GraphConvVariant::Sage => {
                graph.push(self.conv1x1(format!("{p}.graph.w1"), c, c, m));
                graph.push(ComplexityNode::leaf(
                    format!("{p}.graph.aggregate"),
                    0,
                    gather,
                ));
                graph.push(self.conv1x1(format!("{p}.graph.w2"), 2 * c, c, n));
            }
            GraphConvVariant::Gin => {
                graph.push(ComplexityNode::leaf(
                    format!("{p}.graph.aggregate"),
                    1,
                    gather + self.elementwise(2 * n * c),
                ));
                graph.push(self.conv1x1(format!("{p}.graph.w"), c, c, n));
            }
        }
        graph.push(self.bn(format!("{p}.graph.bn"), c, n));
        graph.push(self.act(format!("{p}.graph.gelu"), c * n, 2));
        ComplexityNode::group(
            p.to_string(),
            vec![
                self.conv1x1(format!("{p}.fc1"), c, c, n),
                self.bn(format!("{p}.fc1.bn"), c, n),
                self.act(format!("{p}.fc1.relu"), c * n, 1),
                ComplexityNode::group(format!("{p}.graph"), graph),
                self.conv1x1(format!("{p}.fc2"), c, c, n),
                self.bn(format!("{p}.fc2.bn"), c, n),
                self.act(format!("{p}.fc2.relu"), c * n, 1),
            ],
        )
    }

    fn spa(&self, p: &str, kernel: usize, c: u64, n: u64) -> ComplexityNode {
        let kk = (kernel * kernel) as u64;
        ComplexityNode::group(
            p.to_string(),
            vec![
                ComplexityNode::leaf(format!("{p}.reduce"), 0, self.elementwise(2 * c * n)),
                ComplexityNode::leaf(format!("{p}.conv"), 2 * kk + 1, self.macs(2 * kk * n)),
                self.act(format!("{p}.sigmoid"), n, 1),
                self.act(format!("{p}.mul"), c * n, 1),
            ],
        )
    }

    fn gcam(
        &self,
        p: &str,
        cfg: &DecoderConfig,
        stage: usize,
        h: usize,
        w: usize,
    ) -> ComplexityNode {
        let c = cfg.gcam_channels(stage) as u64;
        let n = (h * w) as u64;
        let mut parts = Vec::new();
        if cfg.use_gcb {
            parts.push(self.gcb(&format!("{p}.gcb"), cfg, stage, c, h, w));
        }
        if cfg.use_spa {
            parts.push(self.spa(&format!("{p}.spa"), cfg.spa_kernel, c, n));
        }
        if cfg.gcam_order == GcamOrder::SpaThenGcb {
            parts.reverse();
        }
        ComplexityNode::group(p.to_string(), parts)
    }

    fn ucb(&self, p: &str, cin: u64, cout: u64, n_out: u64) -> ComplexityNode {
        ComplexityNode::group(
            p.to_string(),
            vec![
                ComplexityNode::leaf(format!("{p}.dw"), 10 * cin, self.macs(9 * cin * n_out)),
                self.bn(format!("{p}.bn"), cin, n_out),
                self.act(format!("{p}.relu"), cin * n_out, 1),
                self.conv1x1(format!("{p}.proj"), cin, cout, n_out),
            ],
        )
    }
}

/// Full breakdown of the decoder for an input image of `input_hw`, whose
/// pyramid feature `X_s` sits at `1 / 2^(s+1)` resolution.
pub fn profile(
    cfg: &DecoderConfig,
    input_hw: (usize, usize),
    convention: FlopConvention,
) -> ComplexityReport {
    let cnt = Counter { conv: convention };
    let classes = cfg.classes as u64;
    let mut stages = Vec::new();
    for stage in (1..=4).rev() {
        let p = format!("stage{stage}");
        let (_, h, w) = cfg.feature_dims(stage, input_hw);
        let n = (h * w) as u64;
        let mut parts = Vec::new();
        if stage < 4 {
            let cin = cfg.gcam_channels(stage + 1) as u64;
            let c = cfg.channels(stage) as u64;
            parts.push(cnt.ucb(&format!("{p}.ucb"), cin, c, n));
            let merge = match cfg.aggregation {
                Aggregation::Add => cnt.elementwise(c * n),
                Aggregation::Concat => 0,
            };
            parts.push(ComplexityNode::leaf(format!("{p}.merge"), 0, merge));
        }
        parts.push(cnt.gcam(&format!("{p}.gcam"), cfg, stage, h, w));
        let c = cfg.gcam_channels(stage) as u64;
        parts.push(ComplexityNode::group(
            format!("{p}.head"),
            vec![cnt.conv1x1(format!("{p}.head.conv"), c, classes, n)],
        ));
        stages.push(ComplexityNode::group(p, parts));
    }
    let full = (input_hw.0 * input_hw.1) as u64;
    let weighted = cfg.head_weights.iter().filter(|&&w| w != 1.0).count() as u64;
    stages.push(ComplexityNode::leaf(
        "output.aggregate".to_string(),
        0,
        cnt.elementwise((3 + weighted) * classes * full),
    ));
    ComplexityReport {
        input_hw,
        convention,
        root: ComplexityNode::group("decoder".to_string(), stages),
    }
}

/// Parameter breakdown; FLOP fields are zero.
pub fn count_params(cfg: &DecoderConfig) -> ComplexityReport {
    let mut r = profile(cfg, (224, 224), FlopConvention::MACS);
    fn clear(n: &mut ComplexityNode) {
        n.flops = 0;
        n.children.iter_mut().for_each(clear);
    }
    clear(&mut r.root);
    r
}

pub fn count_flops(
    cfg: &DecoderConfig,
    input_hw: (usize, usize),
    convention: FlopConvention,
) -> ComplexityReport {
    profile(cfg, input_hw, convention)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::GCascade;
    use crate::nn::ParamStore;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pointwise_conv_flops() {
        let c = Counter {
            conv: FlopConvention::FULL,
        };
        let n = c.conv1x1("c".into(), 2, 3, 16);
        assert_eq!(n.flops, 192);
        assert_eq!(n.params, 9);
    }

    #[test]
    fn seg_head_params() {
        let r = count_params(&DecoderConfig::default());
        assert_eq!(r.root.find("stage1.head").unwrap().params, 64 * 9 + 9);
    }

    #[test]
    fn totals_equal_leaf_sums() {
        for conv in [FlopConvention::MACS, FlopConvention::FULL] {
            for v in GraphConvVariant::ALL {
                let cfg = DecoderConfig {
                    variant: v,
                    ..DecoderConfig::default()
                };
                let r = profile(&cfg, (224, 224), conv);
                assert_eq!(r.leaf_sums(), (r.total_params(), r.total_flops()));
            }
        }
    }

    #[test]
    fn closed_form_matches_built_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for v in GraphConvVariant::ALL {
            for aggregation in [Aggregation::Add, Aggregation::Concat] {
                let cfg = DecoderConfig {
                    variant: v,
                    aggregation,
                    ..DecoderConfig::default()
                };
                let mut store = ParamStore::<f32>::new();
                GCascade::new(&mut store, &cfg, &mut rng).unwrap();
                let r = count_params(&cfg);
                assert_eq!(
                    r.total_params(),
                    store.num_params() as u64,
                    "{v} {aggregation}"
                );
                for block in [
                    "stage4.gcam.gcb",
                    "stage2.gcam.spa",
                    "stage3.ucb",
                    "stage1.head",
                ] {
                    let from_store: usize = store
                        .params()
                        .iter()
                        .filter(|p| p.name.starts_with(&format!("{block}.")))
                        .map(|p| p.value.numel())
                        .sum();
                    assert_eq!(
                        r.root.find(block).unwrap().params,
                        from_store as u64,
                        "{block}"
                    );
                }
            }
        }
    }

    #[test]
    fn params_do_not_depend_on_input_size() {
        let cfg = DecoderConfig::default();
        let a = profile(&cfg, (224, 224), FlopConvention::FULL);
        let b = profile(&cfg, (256, 256), FlopConvention::FULL);
        assert_eq!(a.total_params(), b.total_params());
        assert!(b.total_flops() > a.total_flops());
    }

    #[test]
    fn table_and_csv_list_every_node() {
        let r = profile(&DecoderConfig::default(), (224, 224), FlopConvention::MACS);
        let mut nodes = 0;
        r.root.walk(0, &mut |_, _| nodes += 1);
        assert_eq!(r.to_csv().lines().count(), nodes + 1);
        assert!(r
            .to_table()
            .starts_with("# input 224x224, FLOP convention: macs"));
        assert!(r.to_csv().contains("decoder,1783984,"));
    }
}
