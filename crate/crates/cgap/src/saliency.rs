//! First-order saliency scores from accumulated `|gradient * weight|`.
//!
//! Per-weight statistics accumulate over every minibatch since the last
//! structural event and reduce to growth scores per filter (sum over the
//! filter's weight pixels) or per neuron (sum over its fan-out column in the
//! consumer layer). The same per-weight statistic, unreduced, is the pruning
//! score. Tables are bound to a topology version; any structural edit makes
//! them stale and further use is a hard error until they are reset.

use crate::error::{Error, Result};
use crate::network::{LayerState, NetworkTopology};
use crate::scalar::Scalar;

/// Accumulate `|g * w|` elementwise into `scores`.
pub fn accumulate_abs_gw<S: Scalar>(scores: &mut [S], grads: &[S], weights: &[S]) {
    debug_assert_eq!(scores.len(), grads.len());
    debug_assert_eq!(scores.len(), weights.len());
    for ((s, &g), &w) in scores.iter_mut().zip(grads).zip(weights) {
        *s += (g * w).abs();
    }
}

/// Sum consecutive blocks of `unit_len` scores (per-filter or per-row reduction).
pub fn unit_sums<S: Scalar>(scores: &[S], unit_len: usize) -> Vec<S> {
    scores
        .chunks(unit_len)
        .map(|chunk| chunk.iter().copied().sum())
        .collect()
}

/// Column sums of a row-major `rows x cols` score matrix (per-fan-out-column
/// reduction).
pub fn column_sums<S: Scalar>(scores: &[S], rows: usize, cols: usize) -> Vec<S> {
    debug_assert_eq!(scores.len(), rows * cols);
    let mut out = vec![S::zero(); cols];
    for r in 0..rows {
        for (c, o) in out.iter_mut().enumerate() {
            *o += scores[r * cols + c];
        }
    }
    out
}

/// Indices of the `k` highest scores, ties broken toward the lower index,
/// ordered descending by `(score, -index)`.
pub fn top_k<S: Scalar>(scores: &[S], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > scores.len() {
        return Err(Error::TopKOutOfRange { k, len: scores.len() });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("scores are finite")
            .then(a.cmp(&b))
    });
    order.truncate(k);
    Ok(order)
}

/// Per-weight accumulated saliency for every parameterized layer of one
/// topology version.
pub struct SaliencyTables<S> {
    version: u64,
    batch_count: usize,
    /// Indexed by layer index; `Some` for conv/fc layers.
    layers: Vec<Option<Vec<S>>>,
}

impl<S: Scalar> SaliencyTables<S> {
    pub fn new(net: &NetworkTopology<S>) -> Self {
        let mut tables = SaliencyTables {
            version: 0,
            batch_count: 0,
            layers: Vec::new(),
        };
        tables.reset(net);
        tables
    }

    /// Drop all accumulated statistics and rebind to the net's current
    /// topology version. Must be called after every structural event.
    pub fn reset(&mut self, net: &NetworkTopology<S>) {
        self.version = net.version();
        self.batch_count = 0;
        self.layers = net
            .layers()
            .iter()
            .map(|layer| match layer {
                LayerState::Conv(l) => Some(vec![S::zero(); l.weights.numel()]),
                LayerState::Fc(l) => Some(vec![S::zero(); l.weights.numel()]),
                _ => None,
            })
            .collect();
    }

    pub fn batch_count(&self) -> usize {
        self.batch_count
    }

    /// Error unless the tables were built for the net's current topology.
    pub fn check_fresh(&self, net: &NetworkTopology<S>) -> Result<()> {
        if self.version != net.version() {
            return Err(Error::StaleTable {
                table_version: self.version,
                current_version: net.version(),
            });
        }
        Ok(())
    }

    /// Add one minibatch's `|g * w|` (weights only; biases carry no saliency).
    pub fn accumulate(&mut self, net: &NetworkTopology<S>) -> Result<()> {
        self.check_fresh(net)?;
        for (idx, layer) in net.layers().iter().enumerate() {
            let (weights, grads) = match layer {
                LayerState::Conv(l) => (l.weights.data(), l.weights.grad()),
                LayerState::Fc(l) => (l.weights.data(), l.weights.grad()),
                _ => continue,
            };
            let grads = grads.ok_or(Error::MissingGradients { layer: idx })?;
            let scores = self.layers[idx].as_mut().expect("table exists for param layer");
            accumulate_abs_gw(scores, grads, weights);
        }
        self.batch_count += 1;
        Ok(())
    }

    /// Growth score per filter of a conv layer: sum of the filter's
    /// accumulated per-weight scores.
    pub fn filter_scores(&self, net: &NetworkTopology<S>, layer: usize) -> Result<Vec<S>> {
        self.check_fresh(net)?;
        if self.batch_count == 0 {
            return Err(Error::EmptyWindow);
        }
        let conv = net.conv(layer)?;
        let scores = self.layers[layer].as_ref().expect("conv table");
        Ok(unit_sums(scores, conv.filter_len()))
    }

    /// Growth score per neuron of a hidden fc layer: sum over the neuron's
    /// fan-out column, which lives in the consumer layer's weight matrix.
    pub fn neuron_scores(&self, net: &NetworkTopology<S>, layer: usize) -> Result<Vec<S>> {
        self.check_fresh(net)?;
        if self.batch_count == 0 {
            return Err(Error::EmptyWindow);
        }
        net.fc(layer)?;
        let consumer = net.consumer_of(layer).ok_or(Error::InvalidLayerOp {
            layer,
            reason: "output-layer neurons are not scored".into(),
        })?;
        let next = net.fc(consumer)?;
        let scores = self.layers[consumer].as_ref().expect("fc table");
        Ok(column_sums(scores, next.out_features, next.in_features))
    }

    /// Pruning score per weight: the accumulated statistic itself.
    pub fn weight_prune_scores(&self, net: &NetworkTopology<S>, layer: usize) -> Result<&[S]> {
        self.check_fresh(net)?;
        if self.batch_count == 0 {
            return Err(Error::EmptyWindow);
        }
        self.layers[layer]
            .as_deref()
            .ok_or(Error::InvalidLayerOp {
                layer,
                reason: "not a parameterized layer".into(),
            })
    }

    /// Raw per-weight scores of a layer (diagnostics, tests).
    pub fn layer_scores(&self, layer: usize) -> Option<&[S]> {
        self.layers.get(layer).and_then(|l| l.as_deref())
    }

    /// CSV of per-unit growth scores: `layer,unit,score`.
    pub fn export_csv(&self, net: &NetworkTopology<S>) -> Result<String> {
        let mut out = String::from("layer,unit,score\n");
        for l in net.param_layers() {
            let scores: Option<Vec<S>> = match &net.layers()[l] {
                LayerState::Conv(_) => Some(self.filter_scores(net, l)?),
                LayerState::Fc(_) if !net.is_output_layer(l) => Some(self.neuron_scores(net, l)?),
                _ => None,
            };
            if let Some(scores) = scores {
                for (u, s) in scores.iter().enumerate() {
                    out.push_str(&format!("{l},{u},{s}\n"));
                }
            }
        }
        Ok(out)
    }
}
