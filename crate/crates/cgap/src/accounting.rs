//! Parameter and FLOP accounting, metrics export, and a training-free
//! schedule simulator.
//!
//! Conventions: parameters include biases; FLOPs count two per
//! multiply-accumulate in conv and fc layers only (bias adds, activations and
//! pooling are excluded). Under these rules the reference four-layer net
//! `[20-50-500-10]` on a 1x28x28 input costs exactly 431,080 parameters and
//! 4,586,000 FLOPs, which pins both conventions.

use crate::error::{Error, Result};
use crate::growth::{growth_count, GrowthConfig};
use crate::network::{LayerState, NetworkTopology};
use crate::scalar::{to_f64, Scalar};

/// One parameterized layer's share of a [`ModelFootprint`].
#[derive(Debug, Clone)]
pub struct LayerCost {
    pub name: String,
    pub width: usize,
    pub params: usize,
    pub flops: usize,
}

#[derive(Debug, Clone)]
pub struct ModelFootprint {
    pub layers: Vec<LayerCost>,
    pub total_params: usize,
    pub total_flops: usize,
}

/// Width-level description of the conv/pool + fc skeleton, enough to count
/// parameters and FLOPs without instantiating weights.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopologyShape {
    pub input: (usize, usize, usize),
    pub conv: Vec<usize>,
    pub kernel: usize,
    pub fc: Vec<usize>,
    pub classes: usize,
}

impl TopologyShape {
    pub fn footprint(&self) -> Result<ModelFootprint> {
        let (c, mut h, mut w) = self.input;
        let mut channels = c;
        let mut layers = Vec::new();
        for (i, &o) in self.conv.iter().enumerate() {
            if h < self.kernel || w < self.kernel {
                return Err(Error::dim(
                    format!("conv{}: spatial extent vs kernel", i + 1),
                    format!("at least {0}x{0}", self.kernel),
                    format!("{h}x{w}"),
                ));
            }
            h -= self.kernel - 1;
            w -= self.kernel - 1;
            layers.push(LayerCost {
                name: format!("conv{}", i + 1),
                width: o,
                params: o * channels * self.kernel * self.kernel + o,
                flops: 2 * self.kernel * self.kernel * channels * o * h * w,
            });
            if h % 2 != 0 || w % 2 != 0 {
                return Err(Error::dim(
                    format!("pool after conv{}: even spatial dims", i + 1),
                    "even HxW",
                    format!("{h}x{w}"),
                ));
            }
            h /= 2;
            w /= 2;
            channels = o;
        }
        let mut features = channels * h * w;
        for (i, &o) in self.fc.iter().chain(std::iter::once(&self.classes)).enumerate() {
            layers.push(LayerCost {
                name: format!("fc{}", i + 1),
                width: o,
                params: o * features + o,
                flops: 2 * features * o,
            });
            features = o;
        }
        let total_params = layers.iter().map(|l| l.params).sum();
        let total_flops = layers.iter().map(|l| l.flops).sum();
        Ok(ModelFootprint {
            layers,
            total_params,
            total_flops,
        })
    }

    /// All growable widths (conv layers and hidden fc layers; the output
    /// layer is fixed).
    fn grow_widths_mut(&mut self) -> Vec<&mut usize> {
        self.conv.iter_mut().chain(self.fc.iter_mut()).collect()
    }
}

/// Per-layer and total footprint of a live topology. Reads widths and the
/// layer chain only, never weight values.
pub fn footprint<S: Scalar>(net: &NetworkTopology<S>) -> ModelFootprint {
    let (_, mut h, mut w) = net.input_shape();
    let (mut conv_n, mut fc_n) = (0usize, 0usize);
    let mut layers = Vec::new();
    for layer in net.layers() {
        match layer {
            LayerState::Conv(l) => {
                conv_n += 1;
                h -= l.kernel - 1;
                w -= l.kernel - 1;
                layers.push(LayerCost {
                    name: format!("conv{conv_n}"),
                    width: l.out_channels,
                    params: l.out_channels * l.in_channels * l.kernel * l.kernel + l.out_channels,
                    flops: 2 * l.kernel * l.kernel * l.in_channels * l.out_channels * h * w,
                });
            }
            LayerState::Pool => {
                h /= 2;
                w /= 2;
            }
            LayerState::Fc(l) => {
                fc_n += 1;
                layers.push(LayerCost {
                    name: format!("fc{fc_n}"),
                    width: l.out_features,
                    params: l.out_features * l.in_features + l.out_features,
                    flops: 2 * l.in_features * l.out_features,
                });
            }
            _ => {}
        }
    }
    let total_params = layers.iter().map(|l| l.params).sum();
    let total_flops = layers.iter().map(|l| l.flops).sum();
    ModelFootprint {
        layers,
        total_params,
        total_flops,
    }
}

/// Total parameter count (weights plus biases; zero-valued weights still
/// present count, removed units do not).
pub fn param_count<S: Scalar>(net: &NetworkTopology<S>) -> usize {
    footprint(net).total_params
}

/// Total FLOPs for one forward pass on the net's input shape.
pub fn flop_count<S: Scalar>(net: &NetworkTopology<S>) -> usize {
    footprint(net).total_flops
}

/// CSV of per-layer widths against a baseline: `layer,width,baseline_width,ratio`.
pub fn export_layer_sizes<S: Scalar>(net: &NetworkTopology<S>, baseline: &[usize]) -> Result<String> {
    let fp = footprint(net);
    if baseline.len() != fp.layers.len() {
        return Err(Error::dim(
            "layer-sizes baseline widths",
            fp.layers.len(),
            baseline.len(),
        ));
    }
    let mut out = String::from("layer,width,baseline_width,ratio\n");
    for (cost, &base) in fp.layers.iter().zip(baseline) {
        let ratio = cost.width as f64 / base as f64;
        out.push_str(&format!("{},{},{},{}\n", cost.name, cost.width, base, ratio));
    }
    Ok(out)
}

/// Plain-text matrix of per-connection weight magnitude for one layer:
/// rows are input indices, columns are output indices. Conv entries are the
/// mean `|w|` over the kernel window; fc entries are `|w|`.
pub fn export_weight_heatmap<S: Scalar>(net: &NetworkTopology<S>, layer: usize) -> Result<String> {
    let mut out = String::new();
    match &net.layers()[layer] {
        LayerState::Conv(l) => {
            let kk = l.kernel * l.kernel;
            for i in 0..l.in_channels {
                let row: Vec<String> = (0..l.out_channels)
                    .map(|o| {
                        let base = (o * l.in_channels + i) * kk;
                        let mean = l.weights.data()[base..base + kk]
                            .iter()
                            .map(|&v| to_f64(v).abs())
                            .sum::<f64>()
                            / kk as f64;
                        format!("{mean}")
                    })
                    .collect();
                out.push_str(&row.join(" "));
                out.push('\n');
            }
        }
        LayerState::Fc(l) => {
            for i in 0..l.in_features {
                let row: Vec<String> = (0..l.out_features)
                    .map(|o| format!("{}", to_f64(l.weights.data()[o * l.in_features + i]).abs()))
                    .collect();
                out.push_str(&row.join(" "));
                out.push('\n');
            }
        }
        other => {
            return Err(Error::InvalidLayerOp {
                layer,
                reason: format!("heatmap needs a conv or fc layer, found {}", other.kind_name()),
            })
        }
    }
    Ok(out)
}

/// Pruning assumptions for the training-free simulator: real removals depend
/// on learned sparsity, so the simulator removes a fixed fraction of each
/// growable layer's units per event instead.
#[derive(Debug, Clone)]
pub struct SimPrune {
    pub start_epoch: usize,
    pub period_epochs: usize,
    pub removal_fraction: f64,
}

#[derive(Debug, Clone)]
pub struct SimRecord {
    pub epoch: usize,
    pub widths: Vec<usize>,
    pub params: usize,
    pub flops: usize,
    pub event: String,
}

/// Deterministic width/params/FLOPs trajectory applying the growth
/// arithmetic on its schedule and, optionally, the assumed removal fraction.
/// Epoch timing matches the live training loop: events fire after the
/// training epoch, at `epoch > 0 && epoch % period == 0`, growth only while
/// capacity allows.
pub fn simulate_schedule(
    seed: &TopologyShape,
    growth: Option<&GrowthConfig>,
    prune: Option<&SimPrune>,
    epochs: usize,
) -> Result<Vec<SimRecord>> {
    let mut shape = seed.clone();
    let mut records = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let mut grew = false;
        if let Some(g) = growth {
            if epoch > 0 && epoch % g.growth_period_epochs == 0 {
                for _ in 0..g.growths_per_epoch {
                    let first = shape.conv.first().copied().unwrap_or(0);
                    if first == 0 || first + growth_count(first, g.beta) > g.tau_capa {
                        break;
                    }
                    for w in shape.grow_widths_mut() {
                        *w += growth_count(*w, g.beta);
                    }
                    grew = true;
                }
            }
        }
        let mut pruned = false;
        if let Some(p) = prune {
            if epoch > 0 && epoch >= p.start_epoch && epoch % p.period_epochs == 0 {
                for w in shape.grow_widths_mut() {
                    let removed = (p.removal_fraction * *w as f64).floor() as usize;
                    *w = (*w - removed.min(*w)).max(1);
                }
                pruned = true;
            }
        }
        let fp = shape.footprint()?;
        let event = match (grew, pruned) {
            (true, true) => "growth+prune",
            (true, false) => "growth",
            (false, true) => "prune",
            (false, false) => "",
        };
        records.push(SimRecord {
            epoch,
            widths: fp.layers.iter().map(|l| l.width).collect(),
            params: fp.total_params,
            flops: fp.total_flops,
            event: event.to_string(),
        });
    }
    Ok(records)
}

/// CSV rendering of a simulated trajectory. Layer count is constant, so
/// widths get one column per parameterized layer.
pub fn simulate_csv(seed: &TopologyShape, records: &[SimRecord]) -> Result<String> {
    let names: Vec<String> = seed.footprint()?.layers.iter().map(|l| l.name.clone()).collect();
    let mut out = format!("epoch,params,flops,event,{}\n", names.join(","));
    for r in records {
        let widths: Vec<String> = r.widths.iter().map(|w| w.to_string()).collect();
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.epoch,
            r.params,
            r.flops,
            r.event,
            widths.join(",")
        ));
    }
    Ok(out)
}
