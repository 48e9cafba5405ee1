//! Mutable network topology with structural-edit primitives.
//!
//! A [`NetworkTopology`] is an ordered list of layer states whose widths can
//! change while training: filters and neurons are inserted next to a source
//! unit or removed outright, and the adjacent (consumer) layer's input
//! dimension is grown or compacted in the same step so a forward pass always
//! succeeds. Every structural edit bumps a version counter that downstream
//! bookkeeping (saliency tables) uses to detect staleness.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops;
use crate::scalar::{from_f64, Scalar};
use crate::tensor::Tensor;

/// A filter (conv) or neuron (fc) address in the current topology.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct UnitId {
    pub layer: usize,
    pub unit: usize,
}

/// Convolution layer state: weights `O x I x K x K`, bias `O`, plus SGD
/// momentum buffers mirroring both tensors and an optional hard-prune mask.
#[derive(Debug, Clone)]
pub struct ConvLayer<S> {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel: usize,
    pub weights: Tensor<S>,
    pub bias: Tensor<S>,
    pub w_momentum: Vec<S>,
    pub b_momentum: Vec<S>,
    pub w_mask: Option<Vec<bool>>,
}

impl<S: Scalar> ConvLayer<S> {
    pub fn new(out_channels: usize, in_channels: usize, kernel: usize, weights: Vec<S>, bias: Vec<S>) -> Result<Self> {
        let wn = out_channels * in_channels * kernel * kernel;
        let weights = Tensor::from_vec(&[out_channels, in_channels, kernel, kernel], weights)?;
        let bias = Tensor::from_vec(&[out_channels], bias)?;
        Ok(ConvLayer {
            out_channels,
            in_channels,
            kernel,
            weights,
            bias,
            w_momentum: vec![S::zero(); wn],
            b_momentum: vec![S::zero(); out_channels],
            w_mask: None,
        })
    }

    /// Size of one filter slab: `I * K * K`.
    pub fn filter_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }
}

/// Fully-connected layer state: weights `O x I`, bias `O`.
#[derive(Debug, Clone)]
pub struct FcLayer<S> {
    pub out_features: usize,
    pub in_features: usize,
    pub weights: Tensor<S>,
    pub bias: Tensor<S>,
    pub w_momentum: Vec<S>,
    pub b_momentum: Vec<S>,
    pub w_mask: Option<Vec<bool>>,
}

impl<S: Scalar> FcLayer<S> {
    pub fn new(out_features: usize, in_features: usize, weights: Vec<S>, bias: Vec<S>) -> Result<Self> {
        let weights = Tensor::from_vec(&[out_features, in_features], weights)?;
        let bias = Tensor::from_vec(&[out_features], bias)?;
        Ok(FcLayer {
            out_features,
            in_features,
            weights,
            bias,
            w_momentum: vec![S::zero(); out_features * in_features],
            b_momentum: vec![S::zero(); out_features],
            w_mask: None,
        })
    }
}

#[derive(Debug, Clone)]
pub enum LayerState<S> {
    Conv(ConvLayer<S>),
    Fc(FcLayer<S>),
    Relu,
    Pool,
    Flatten,
}

impl<S: Scalar> LayerState<S> {
    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerState::Conv(_) => "conv",
            LayerState::Fc(_) => "fc",
            LayerState::Relu => "relu",
            LayerState::Pool => "pool",
            LayerState::Flatten => "flatten",
        }
    }

    pub fn is_parameterized(&self) -> bool {
        matches!(self, LayerState::Conv(_) | LayerState::Fc(_))
    }

    /// Output width (filters or neurons) for parameterized layers.
    pub fn width(&self) -> Option<usize> {
        match self {
            LayerState::Conv(c) => Some(c.out_channels),
            LayerState::Fc(f) => Some(f.out_features),
            _ => None,
        }
    }
}

/// One parameter tensor's buffers, as handed to [`NetworkTopology::visit_params_mut`].
pub struct ParamSlices<'a, S> {
    pub layer: usize,
    pub is_bias: bool,
    pub data: &'a mut [S],
    pub grad: Option<&'a [S]>,
    pub momentum: &'a mut [S],
    pub mask: Option<&'a [bool]>,
}

/// Values for the consumer layer's new input slice when a filter is inserted.
pub enum MappedInput<S> {
    /// Consumer is a conv layer: one `K x K` block per consumer filter,
    /// flattened as `O_next * K * K`.
    Conv(Vec<S>),
    /// Consumer is an fc layer across the flatten boundary: one
    /// `flatten_spatial` column block per consumer neuron, flattened as
    /// `O_next * flatten_spatial`.
    Fc(Vec<S>),
}

struct ForwardCache<S> {
    /// Input tensor of each layer, by layer index.
    inputs: Vec<Tensor<S>>,
    /// Pool argmax indices, by layer index.
    argmax: Vec<Option<Vec<usize>>>,
    output_shape: Vec<usize>,
}

/// Ordered list of layer states with mutable per-layer widths.
pub struct NetworkTopology<S> {
    layers: Vec<LayerState<S>>,
    input_shape: (usize, usize, usize),
    flatten_spatial: usize,
    version: u64,
    cache: Option<ForwardCache<S>>,
}

impl<S: Scalar> NetworkTopology<S> {
    /// Build a conv/pool stack followed by an fc stack, randomly initialized
    /// with `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` draws from `rng`.
    ///
    /// Each conv layer is followed by ReLU and 2x2 max pooling; hidden fc
    /// layers are followed by ReLU. `conv_widths` may be empty for a plain
    /// MLP over the flattened input.
    pub fn feedforward(
        input_shape: (usize, usize, usize),
        conv_widths: &[usize],
        kernel: usize,
        fc_widths: &[usize],
        classes: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let (c, mut h, mut w) = input_shape;
        let mut layers = Vec::new();
        let mut in_ch = c;
        for (idx, &o) in conv_widths.iter().enumerate() {
            if o == 0 {
                return Err(Error::InvalidLayerOp { layer: idx, reason: "zero-width conv layer".into() });
            }
            if h < kernel || w < kernel {
                return Err(Error::dim(
                    format!("conv layer {idx}: spatial extent vs kernel"),
                    format!("at least {kernel}x{kernel}"),
                    format!("{h}x{w}"),
                ));
            }
            let fan_in = in_ch * kernel * kernel;
            layers.push(LayerState::Conv(ConvLayer::new(
                o,
                in_ch,
                kernel,
                init_uniform(rng, o * fan_in, fan_in),
                init_uniform(rng, o, fan_in),
            )?));
            layers.push(LayerState::Relu);
            h -= kernel - 1;
            w -= kernel - 1;
            if h % 2 != 0 || w % 2 != 0 {
                return Err(Error::dim(
                    format!("pool after conv layer {idx}: even spatial dims"),
                    "even HxW",
                    format!("{h}x{w}"),
                ));
            }
            layers.push(LayerState::Pool);
            h /= 2;
            w /= 2;
            in_ch = o;
        }
        layers.push(LayerState::Flatten);
        let flatten_spatial = h * w;
        let mut in_feat = in_ch * flatten_spatial;
        for (idx, &o) in fc_widths.iter().enumerate() {
            if o == 0 {
                return Err(Error::InvalidLayerOp { layer: idx, reason: "zero-width fc layer".into() });
            }
            layers.push(LayerState::Fc(FcLayer::new(
                o,
                in_feat,
                init_uniform(rng, o * in_feat, in_feat),
                init_uniform(rng, o, in_feat),
            )?));
            layers.push(LayerState::Relu);
            in_feat = o;
        }
        layers.push(LayerState::Fc(FcLayer::new(
            classes,
            in_feat,
            init_uniform(rng, classes * in_feat, in_feat),
            init_uniform(rng, classes, in_feat),
        )?));
        let net = NetworkTopology {
            layers,
            input_shape,
            flatten_spatial,
            version: 0,
            cache: None,
        };
        net.validate()?;
        Ok(net)
    }

    /// Assemble a topology from explicit layer states (checkpoint load,
    /// direct-construction oracles in tests). Validates all invariants.
    pub fn from_parts(layers: Vec<LayerState<S>>, input_shape: (usize, usize, usize)) -> Result<Self> {
        let mut net = NetworkTopology {
            layers,
            input_shape,
            flatten_spatial: 0,
            version: 0,
            cache: None,
        };
        net.flatten_spatial = net.walk_shapes()?;
        net.validate()?;
        Ok(net)
    }

    pub fn layers(&self) -> &[LayerState<S>] {
        &self.layers
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        self.input_shape
    }

    /// Spatial element count per feature map at the conv-to-fc boundary.
    pub fn flatten_spatial(&self) -> usize {
        self.flatten_spatial
    }

    /// Monotone counter bumped by every structural edit.
    pub fn version(&self) -> u64 {
        self.version
    }

    /// Indices of parameterized (conv/fc) layers, in forward order.
    pub fn param_layers(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_parameterized())
            .map(|(i, _)| i)
            .collect()
    }

    /// Output widths of parameterized layers, in forward order.
    pub fn widths(&self) -> Vec<usize> {
        self.layers.iter().filter_map(|l| l.width()).collect()
    }

    /// Next parameterized layer after `layer`, if any.
    pub fn consumer_of(&self, layer: usize) -> Option<usize> {
        self.layers
            .iter()
            .enumerate()
            .skip(layer + 1)
            .find(|(_, l)| l.is_parameterized())
            .map(|(i, _)| i)
    }

    /// Whether `layer` is the final parameterized (output) layer.
    pub fn is_output_layer(&self, layer: usize) -> bool {
        self.layers[layer].is_parameterized() && self.consumer_of(layer).is_none()
    }

    pub fn conv(&self, layer: usize) -> Result<&ConvLayer<S>> {
        match self.layers.get(layer) {
            Some(LayerState::Conv(c)) => Ok(c),
            Some(l) => Err(Error::InvalidLayerOp {
                layer,
                reason: format!("expected conv layer, found {}", l.kind_name()),
            }),
            None => Err(Error::InvalidLayerOp { layer, reason: "no such layer".into() }),
        }
    }

    pub fn fc(&self, layer: usize) -> Result<&FcLayer<S>> {
        match self.layers.get(layer) {
            Some(LayerState::Fc(f)) => Ok(f),
            Some(l) => Err(Error::InvalidLayerOp {
                layer,
                reason: format!("expected fc layer, found {}", l.kind_name()),
            }),
            None => Err(Error::InvalidLayerOp { layer, reason: "no such layer".into() }),
        }
    }

    fn conv_mut(&mut self, layer: usize) -> Result<&mut ConvLayer<S>> {
        match self.layers.get_mut(layer) {
            Some(LayerState::Conv(c)) => Ok(c),
            Some(_) | None => Err(Error::InvalidLayerOp { layer, reason: "expected conv layer".into() }),
        }
    }

    fn fc_mut(&mut self, layer: usize) -> Result<&mut FcLayer<S>> {
        match self.layers.get_mut(layer) {
            Some(LayerState::Fc(f)) => Ok(f),
            Some(_) | None => Err(Error::InvalidLayerOp { layer, reason: "expected fc layer".into() }),
        }
    }

    /// Weights and bias tensors of a parameterized layer.
    pub fn params(&self, layer: usize) -> Option<(&Tensor<S>, &Tensor<S>)> {
        match &self.layers[layer] {
            LayerState::Conv(c) => Some((&c.weights, &c.bias)),
            LayerState::Fc(f) => Some((&f.weights, &f.bias)),
            _ => None,
        }
    }

    // ---- forward / backward -------------------------------------------------

    /// Run the network on a batch, retaining activations for `backward`.
    pub fn forward(&mut self, batch: &Tensor<S>) -> Result<Tensor<S>> {
        let (_, c, h, w) = batch.dims4("network input")?;
        if (c, h, w) != self.input_shape {
            return Err(Error::dim(
                "network input shape",
                format!("{:?}", self.input_shape),
                format!("({c}, {h}, {w})"),
            ));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut argmax: Vec<Option<Vec<usize>>> = vec![None; self.layers.len()];
        let mut cur = batch.clone();
        for (idx, layer) in self.layers.iter().enumerate() {
            inputs.push(cur.clone());
            cur = match layer {
                LayerState::Conv(l) => ops::conv2d_forward(&cur, &l.weights, &l.bias)
                    .map_err(|e| in_layer(e, idx))?,
                LayerState::Fc(l) => ops::linear_forward(&cur, &l.weights, &l.bias)
                    .map_err(|e| in_layer(e, idx))?,
                LayerState::Relu => ops::relu_forward(&cur),
                LayerState::Pool => {
                    let (out, am) = ops::maxpool2_forward(&cur).map_err(|e| in_layer(e, idx))?;
                    argmax[idx] = Some(am);
                    out
                }
                LayerState::Flatten => {
                    let n = cur.numel() / cur.dim(0);
                    let b = cur.dim(0);
                    cur.with_shape(&[b, n])?
                }
            };
        }
        self.cache = Some(ForwardCache {
            inputs,
            argmax,
            output_shape: cur.shape().to_vec(),
        });
        Ok(cur)
    }

    /// Backpropagate `loss_grad` (shape of the logits) through the retained
    /// activations, filling every weight and bias gradient buffer.
    pub fn backward(&mut self, loss_grad: &Tensor<S>) -> Result<()> {
        let cache = self.cache.take().ok_or(Error::BackwardBeforeForward)?;
        if loss_grad.shape() != cache.output_shape.as_slice() {
            return Err(Error::dim(
                "backward loss gradient shape",
                format!("{:?}", cache.output_shape),
                format!("{:?}", loss_grad.shape()),
            ));
        }
        let mut upstream = loss_grad.clone();
        for idx in (0..self.layers.len()).rev() {
            let input = &cache.inputs[idx];
            upstream = match &mut self.layers[idx] {
                LayerState::Conv(l) => {
                    let g = ops::conv2d_backward(input, &l.weights, &upstream)
                        .map_err(|e| in_layer(e, idx))?;
                    l.weights.set_grad(g.weights.into_data());
                    l.bias.set_grad(g.bias.into_data());
                    g.input
                }
                LayerState::Fc(l) => {
                    let g = ops::linear_backward(input, &l.weights, &upstream)
                        .map_err(|e| in_layer(e, idx))?;
                    l.weights.set_grad(g.weights.into_data());
                    l.bias.set_grad(g.bias.into_data());
                    g.input
                }
                LayerState::Relu => ops::relu_backward(input, &upstream),
                LayerState::Pool => {
                    let am = cache.argmax[idx].as_ref().expect("pool argmax cached");
                    ops::maxpool2_backward(input.shape(), am, &upstream)
                }
                LayerState::Flatten => upstream.with_shape(input.shape())?,
            };
        }
        Ok(())
    }

    pub fn clear_grads(&mut self) {
        for layer in &mut self.layers {
            match layer {
                LayerState::Conv(l) => {
                    l.weights.clear_grad();
                    l.bias.clear_grad();
                }
                LayerState::Fc(l) => {
                    l.weights.clear_grad();
                    l.bias.clear_grad();
                }
                _ => {}
            }
        }
    }

    // ---- unit-level accessors used by growth and pruning --------------------

    /// Copy of a conv filter's weight slab and bias.
    pub fn filter(&self, layer: usize, unit: usize) -> Result<(Vec<S>, S)> {
        let c = self.conv(layer)?;
        check_unit(layer, unit, c.out_channels)?;
        let fl = c.filter_len();
        Ok((c.weights.data()[unit * fl..(unit + 1) * fl].to_vec(), c.bias.data()[unit]))
    }

    pub fn set_filter(&mut self, layer: usize, unit: usize, weights: &[S], bias: S) -> Result<()> {
        let c = self.conv_mut(layer)?;
        check_unit(layer, unit, c.out_channels)?;
        let fl = c.filter_len();
        if weights.len() != fl {
            return Err(Error::dim("set_filter weights", fl, weights.len()));
        }
        c.weights.data_mut()[unit * fl..(unit + 1) * fl].copy_from_slice(weights);
        c.bias.data_mut()[unit] = bias;
        Ok(())
    }

    /// Copy of an fc neuron's fan-in row and bias.
    pub fn fan_in(&self, layer: usize, unit: usize) -> Result<(Vec<S>, S)> {
        let f = self.fc(layer)?;
        check_unit(layer, unit, f.out_features)?;
        let i = f.in_features;
        Ok((f.weights.data()[unit * i..(unit + 1) * i].to_vec(), f.bias.data()[unit]))
    }

    pub fn set_fan_in(&mut self, layer: usize, unit: usize, weights: &[S], bias: S) -> Result<()> {
        let f = self.fc_mut(layer)?;
        check_unit(layer, unit, f.out_features)?;
        let i = f.in_features;
        if weights.len() != i {
            return Err(Error::dim("set_fan_in weights", i, weights.len()));
        }
        f.weights.data_mut()[unit * i..(unit + 1) * i].copy_from_slice(weights);
        f.bias.data_mut()[unit] = bias;
        Ok(())
    }

    /// Copy of an fc neuron's fan-out column (column `unit` of the consumer
    /// layer's weight matrix).
    pub fn fan_out_col(&self, layer: usize, unit: usize) -> Result<Vec<S>> {
        let consumer = self
            .consumer_of(layer)
            .ok_or(Error::InvalidLayerOp { layer, reason: "output layer has no fan-out".into() })?;
        let f = self.fc(consumer)?;
        check_unit(layer, unit, f.in_features)?;
        let i = f.in_features;
        Ok((0..f.out_features).map(|o| f.weights.data()[o * i + unit]).collect())
    }

    pub fn set_fan_out_col(&mut self, layer: usize, unit: usize, col: &[S]) -> Result<()> {
        let consumer = self
            .consumer_of(layer)
            .ok_or(Error::InvalidLayerOp { layer, reason: "output layer has no fan-out".into() })?;
        let f = self.fc_mut(consumer)?;
        let i = f.in_features;
        check_unit(layer, unit, i)?;
        if col.len() != f.out_features {
            return Err(Error::dim("set_fan_out_col", f.out_features, col.len()));
        }
        for (o, v) in col.iter().enumerate() {
            f.weights.data_mut()[o * i + unit] = *v;
        }
        Ok(())
    }

    /// Copy of the consumer-layer input slice that reads feature map `unit`
    /// of conv layer `layer` (the projection of that filter downstream).
    pub fn consumer_input_slice(&self, layer: usize, unit: usize) -> Result<MappedInput<S>> {
        let c = self.conv(layer)?;
        check_unit(layer, unit, c.out_channels)?;
        let consumer = self
            .consumer_of(layer)
            .ok_or(Error::InvalidLayerOp { layer, reason: "conv layer has no consumer".into() })?;
        match &self.layers[consumer] {
            LayerState::Conv(next) => {
                let kk = next.kernel * next.kernel;
                let i2 = next.in_channels;
                let mut out = Vec::with_capacity(next.out_channels * kk);
                for o in 0..next.out_channels {
                    let base = (o * i2 + unit) * kk;
                    out.extend_from_slice(&next.weights.data()[base..base + kk]);
                }
                Ok(MappedInput::Conv(out))
            }
            LayerState::Fc(next) => {
                let fs = self.flatten_spatial;
                let i2 = next.in_features;
                let mut out = Vec::with_capacity(next.out_features * fs);
                for o in 0..next.out_features {
                    let base = o * i2 + unit * fs;
                    out.extend_from_slice(&next.weights.data()[base..base + fs]);
                }
                Ok(MappedInput::Fc(out))
            }
            _ => unreachable!("consumer_of returns parameterized layers"),
        }
    }

    /// Overwrite the consumer-layer slice read from feature map `unit`.
    pub fn set_consumer_input_slice(&mut self, layer: usize, unit: usize, values: &MappedInput<S>) -> Result<()> {
        let consumer = self
            .consumer_of(layer)
            .ok_or(Error::InvalidLayerOp { layer, reason: "conv layer has no consumer".into() })?;
        let fs = self.flatten_spatial;
        match (&mut self.layers[consumer], values) {
            (LayerState::Conv(next), MappedInput::Conv(vals)) => {
                let kk = next.kernel * next.kernel;
                let i2 = next.in_channels;
                if vals.len() != next.out_channels * kk {
                    return Err(Error::dim("consumer conv slice", next.out_channels * kk, vals.len()));
                }
                for o in 0..next.out_channels {
                    let base = (o * i2 + unit) * kk;
                    next.weights.data_mut()[base..base + kk].copy_from_slice(&vals[o * kk..(o + 1) * kk]);
                }
                Ok(())
            }
            (LayerState::Fc(next), MappedInput::Fc(vals)) => {
                let i2 = next.in_features;
                if vals.len() != next.out_features * fs {
                    return Err(Error::dim("consumer fc slice", next.out_features * fs, vals.len()));
                }
                for o in 0..next.out_features {
                    let base = o * i2 + unit * fs;
                    next.weights.data_mut()[base..base + fs].copy_from_slice(&vals[o * fs..(o + 1) * fs]);
                }
                Ok(())
            }
            _ => Err(Error::InvalidLayerOp { layer: consumer, reason: "mapped slice kind mismatch".into() }),
        }
    }

    /// Visit every parameter tensor (weights then bias, per layer in forward
    /// order) with mutable data and momentum plus read views of gradient and
    /// mask. Used by the optimizer step.
    pub fn visit_params_mut(
        &mut self,
        mut f: impl FnMut(ParamSlices<'_, S>) -> Result<()>,
    ) -> Result<()> {
        for (idx, layer) in self.layers.iter_mut().enumerate() {
            match layer {
                LayerState::Conv(l) => {
                    let (data, grad) = l.weights.data_and_grad();
                    f(ParamSlices {
                        layer: idx,
                        is_bias: false,
                        data,
                        grad,
                        momentum: &mut l.w_momentum,
                        mask: l.w_mask.as_deref(),
                    })?;
                    let (data, grad) = l.bias.data_and_grad();
                    f(ParamSlices {
                        layer: idx,
                        is_bias: true,
                        data,
                        grad,
                        momentum: &mut l.b_momentum,
                        mask: None,
                    })?;
                }
                LayerState::Fc(l) => {
                    let (data, grad) = l.weights.data_and_grad();
                    f(ParamSlices {
                        layer: idx,
                        is_bias: false,
                        data,
                        grad,
                        momentum: &mut l.w_momentum,
                        mask: l.w_mask.as_deref(),
                    })?;
                    let (data, grad) = l.bias.data_and_grad();
                    f(ParamSlices {
                        layer: idx,
                        is_bias: true,
                        data,
                        grad,
                        momentum: &mut l.b_momentum,
                        mask: None,
                    })?;
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Set the given flat weight positions of a layer to zero (value edit; no
    /// structural change, no version bump).
    pub fn zero_weights(&mut self, layer: usize, positions: &[usize]) -> Result<()> {
        let data = match self.layers.get_mut(layer) {
            Some(LayerState::Conv(c)) => c.weights.data_mut(),
            Some(LayerState::Fc(f)) => f.weights.data_mut(),
            _ => return Err(Error::InvalidLayerOp { layer, reason: "not a parameterized layer".into() }),
        };
        for &p in positions {
            data[p] = S::zero();
        }
        Ok(())
    }

    /// Install a hard mask freezing every currently-zero weight of the layer.
    pub fn mask_current_zeros(&mut self, layer: usize) -> Result<()> {
        match self.layers.get_mut(layer) {
            Some(LayerState::Conv(c)) => {
                c.w_mask = Some(c.weights.data().iter().map(|&v| v == S::zero()).collect());
                Ok(())
            }
            Some(LayerState::Fc(f)) => {
                f.w_mask = Some(f.weights.data().iter().map(|&v| v == S::zero()).collect());
                Ok(())
            }
            _ => Err(Error::InvalidLayerOp { layer, reason: "not a parameterized layer".into() }),
        }
    }

    // ---- structural edits ----------------------------------------------------

    /// Insert a newborn filter immediately after `source` in conv layer
    /// `layer`. The consumer layer's input dimension grows by one channel
    /// (or by `flatten_spatial` columns across the flatten boundary) using
    /// the caller-supplied `mapped` values. New parameters get zero momentum.
    ///
    /// Returns the newborn's unit index (`source + 1`).
    pub fn insert_filter(
        &mut self,
        layer: usize,
        source: usize,
        newborn_weights: &[S],
        newborn_bias: S,
        mapped: &MappedInput<S>,
    ) -> Result<usize> {
        let consumer = self
            .consumer_of(layer)
            .ok_or(Error::InvalidLayerOp { layer, reason: "cannot grow the output layer".into() })?;
        {
            let c = self.conv(layer)?;
            check_unit(layer, source, c.out_channels)?;
            if newborn_weights.len() != c.filter_len() {
                return Err(Error::dim("newborn filter weights", c.filter_len(), newborn_weights.len()));
            }
        }
        // Validate the mapped slice up front so a failed edit cannot leave
        // the producer and consumer out of sync.
        match (&self.layers[consumer], mapped) {
            (LayerState::Conv(next), MappedInput::Conv(vals)) => {
                let expect = next.out_channels * next.kernel * next.kernel;
                if vals.len() != expect {
                    return Err(Error::dim("mapped conv slice", expect, vals.len()));
                }
            }
            (LayerState::Fc(next), MappedInput::Fc(vals)) => {
                let expect = next.out_features * self.flatten_spatial;
                if vals.len() != expect {
                    return Err(Error::dim("mapped fc slice", expect, vals.len()));
                }
            }
            _ => {
                return Err(Error::InvalidLayerOp {
                    layer: consumer,
                    reason: "mapped slice kind mismatch".into(),
                })
            }
        }
        let pos = source + 1;
        {
            let c = self.conv_mut(layer)?;
            let fl = c.filter_len();
            insert_block(c.weights.data_mut_vec(), fl, pos, newborn_weights);
            c.weights.reshape_in_place(&[c.out_channels + 1, c.in_channels, c.kernel, c.kernel]);
            c.bias.data_mut_vec().insert(pos, newborn_bias);
            c.bias.reshape_in_place(&[c.out_channels + 1]);
            insert_block(&mut c.w_momentum, fl, pos, &vec![S::zero(); fl]);
            c.b_momentum.insert(pos, S::zero());
            if let Some(mask) = &mut c.w_mask {
                insert_block(mask, fl, pos, &vec![false; fl]);
            }
            c.out_channels += 1;
        }
        self.grow_consumer_input(consumer, pos, mapped)?;
        self.mark_edited();
        Ok(pos)
    }

    /// Remove filter `unit` from conv layer `layer` and the corresponding
    /// input slice of the consumer layer. Refuses to empty the layer.
    pub fn remove_filter(&mut self, layer: usize, unit: usize) -> Result<()> {
        let consumer = self
            .consumer_of(layer)
            .ok_or(Error::InvalidLayerOp { layer, reason: "cannot prune the output layer".into() })?;
        {
            let c = self.conv(layer)?;
            check_unit(layer, unit, c.out_channels)?;
            if c.out_channels < 2 {
                return Err(Error::LayerCollapse { layer });
            }
        }
        {
            let c = self.conv_mut(layer)?;
            let fl = c.filter_len();
            remove_block(c.weights.data_mut_vec(), fl, unit);
            c.weights.reshape_in_place(&[c.out_channels - 1, c.in_channels, c.kernel, c.kernel]);
            c.bias.data_mut_vec().remove(unit);
            c.bias.reshape_in_place(&[c.out_channels - 1]);
            remove_block(&mut c.w_momentum, fl, unit);
            c.b_momentum.remove(unit);
            if let Some(mask) = &mut c.w_mask {
                remove_block(mask, fl, unit);
            }
            c.out_channels -= 1;
        }
        self.shrink_consumer_input(consumer, unit)?;
        self.mark_edited();
        Ok(())
    }

    /// Insert a newborn neuron immediately after `source` in hidden fc layer
    /// `layer`: a fan-in row (plus bias) in `layer` and a fan-out column in
    /// the consumer layer. Returns the newborn's unit index.
    pub fn insert_neuron(
        &mut self,
        layer: usize,
        source: usize,
        fan_in_row: &[S],
        bias: S,
        fan_out_col: &[S],
    ) -> Result<usize> {
        let consumer = self
            .consumer_of(layer)
            .ok_or(Error::InvalidLayerOp { layer, reason: "cannot grow the output layer".into() })?;
        {
            let f = self.fc(layer)?;
            check_unit(layer, source, f.out_features)?;
            if fan_in_row.len() != f.in_features {
                return Err(Error::dim("newborn fan-in row", f.in_features, fan_in_row.len()));
            }
            let next = self.fc(consumer)?;
            if fan_out_col.len() != next.out_features {
                return Err(Error::dim("newborn fan-out column", next.out_features, fan_out_col.len()));
            }
        }
        let pos = source + 1;
        {
            let f = self.fc_mut(layer)?;
            let i = f.in_features;
            insert_block(f.weights.data_mut_vec(), i, pos, fan_in_row);
            f.weights.reshape_in_place(&[f.out_features + 1, i]);
            f.bias.data_mut_vec().insert(pos, bias);
            f.bias.reshape_in_place(&[f.out_features + 1]);
            insert_block(&mut f.w_momentum, i, pos, &vec![S::zero(); i]);
            f.b_momentum.insert(pos, S::zero());
            if let Some(mask) = &mut f.w_mask {
                insert_block(mask, i, pos, &vec![false; i]);
            }
            f.out_features += 1;
        }
        {
            let next = self.fc_mut(consumer)?;
            insert_column(next, pos, fan_out_col);
        }
        self.mark_edited();
        Ok(pos)
    }

    /// Remove neuron `unit` from hidden fc layer `layer`: its fan-in row and
    /// the consumer layer's fan-out column. Refuses to empty the layer.
    pub fn remove_neuron(&mut self, layer: usize, unit: usize) -> Result<()> {
        let consumer = self
            .consumer_of(layer)
            .ok_or(Error::InvalidLayerOp { layer, reason: "cannot prune the output layer".into() })?;
        {
            let f = self.fc(layer)?;
            check_unit(layer, unit, f.out_features)?;
            if f.out_features < 2 {
                return Err(Error::LayerCollapse { layer });
            }
        }
        {
            let f = self.fc_mut(layer)?;
            let i = f.in_features;
            remove_block(f.weights.data_mut_vec(), i, unit);
            f.weights.reshape_in_place(&[f.out_features - 1, i]);
            f.bias.data_mut_vec().remove(unit);
            f.bias.reshape_in_place(&[f.out_features - 1]);
            remove_block(&mut f.w_momentum, i, unit);
            f.b_momentum.remove(unit);
            if let Some(mask) = &mut f.w_mask {
                remove_block(mask, i, unit);
            }
            f.out_features -= 1;
        }
        {
            let next = self.fc_mut(consumer)?;
            remove_column(next, unit);
        }
        self.mark_edited();
        Ok(())
    }

    fn grow_consumer_input(&mut self, consumer: usize, channel_pos: usize, mapped: &MappedInput<S>) -> Result<()> {
        let fs = self.flatten_spatial;
        match (&mut self.layers[consumer], mapped) {
            (LayerState::Conv(next), MappedInput::Conv(vals)) => {
                let kk = next.kernel * next.kernel;
                if vals.len() != next.out_channels * kk {
                    return Err(Error::dim("mapped conv slice", next.out_channels * kk, vals.len()));
                }
                let old_i = next.in_channels;
                insert_inner_block(next.weights.data_mut_vec(), old_i, kk, channel_pos, vals);
                next.weights.reshape_in_place(&[next.out_channels, old_i + 1, next.kernel, next.kernel]);
                insert_inner_block(&mut next.w_momentum, old_i, kk, channel_pos, &vec![S::zero(); next.out_channels * kk]);
                if let Some(mask) = &mut next.w_mask {
                    insert_inner_block(mask, old_i, kk, channel_pos, &vec![false; next.out_channels * kk]);
                }
                next.in_channels += 1;
                Ok(())
            }
            (LayerState::Fc(next), MappedInput::Fc(vals)) => {
                if vals.len() != next.out_features * fs {
                    return Err(Error::dim("mapped fc slice", next.out_features * fs, vals.len()));
                }
                let old_i = next.in_features / fs;
                insert_inner_block(next.weights.data_mut_vec(), old_i, fs, channel_pos, vals);
                next.weights.reshape_in_place(&[next.out_features, next.in_features + fs]);
                insert_inner_block(&mut next.w_momentum, old_i, fs, channel_pos, &vec![S::zero(); next.out_features * fs]);
                if let Some(mask) = &mut next.w_mask {
                    insert_inner_block(mask, old_i, fs, channel_pos, &vec![false; next.out_features * fs]);
                }
                next.in_features += fs;
                Ok(())
            }
            _ => Err(Error::InvalidLayerOp { layer: consumer, reason: "mapped slice kind mismatch".into() }),
        }
    }

    fn shrink_consumer_input(&mut self, consumer: usize, channel: usize) -> Result<()> {
        let fs = self.flatten_spatial;
        match &mut self.layers[consumer] {
            LayerState::Conv(next) => {
                let kk = next.kernel * next.kernel;
                let old_i = next.in_channels;
                remove_inner_block(next.weights.data_mut_vec(), old_i, kk, channel);
                next.weights.reshape_in_place(&[next.out_channels, old_i - 1, next.kernel, next.kernel]);
                remove_inner_block(&mut next.w_momentum, old_i, kk, channel);
                if let Some(mask) = &mut next.w_mask {
                    remove_inner_block(mask, old_i, kk, channel);
                }
                next.in_channels -= 1;
                Ok(())
            }
            LayerState::Fc(next) => {
                let old_i = next.in_features / fs;
                remove_inner_block(next.weights.data_mut_vec(), old_i, fs, channel);
                next.weights.reshape_in_place(&[next.out_features, next.in_features - fs]);
                remove_inner_block(&mut next.w_momentum, old_i, fs, channel);
                if let Some(mask) = &mut next.w_mask {
                    remove_inner_block(mask, old_i, fs, channel);
                }
                next.in_features -= fs;
                Ok(())
            }
            _ => Err(Error::InvalidLayerOp { layer: consumer, reason: "consumer is not parameterized".into() }),
        }
    }

    fn mark_edited(&mut self) {
        self.version += 1;
        self.cache = None;
        self.clear_grads();
    }

    // ---- validation -----------------------------------------------------------

    /// Walk layer shapes from the input, returning the flatten spatial count.
    fn walk_shapes(&self) -> Result<usize> {
        let (c, mut h, mut w) = self.input_shape;
        let mut channels = c;
        let mut features: Option<usize> = None;
        let mut flatten_spatial = 0usize;
        for (idx, layer) in self.layers.iter().enumerate() {
            match layer {
                LayerState::Conv(l) => {
                    if features.is_some() {
                        return Err(Error::InvalidLayerOp { layer: idx, reason: "conv after flatten".into() });
                    }
                    if l.in_channels != channels {
                        return Err(Error::dim(
                            format!("layer {idx}: conv input channels"),
                            channels,
                            l.in_channels,
                        ));
                    }
                    if h < l.kernel || w < l.kernel {
                        return Err(Error::dim(
                            format!("layer {idx}: spatial extent vs kernel"),
                            format!("at least {0}x{0}", l.kernel),
                            format!("{h}x{w}"),
                        ));
                    }
                    h -= l.kernel - 1;
                    w -= l.kernel - 1;
                    channels = l.out_channels;
                }
                LayerState::Pool => {
                    if features.is_some() {
                        return Err(Error::InvalidLayerOp { layer: idx, reason: "pool after flatten".into() });
                    }
                    if h % 2 != 0 || w % 2 != 0 {
                        return Err(Error::dim(
                            format!("layer {idx}: pool needs even dims"),
                            "even HxW",
                            format!("{h}x{w}"),
                        ));
                    }
                    h /= 2;
                    w /= 2;
                }
                LayerState::Flatten => {
                    flatten_spatial = h * w;
                    features = Some(channels * h * w);
                }
                LayerState::Fc(l) => {
                    let feat = features.ok_or(Error::InvalidLayerOp { layer: idx, reason: "fc before flatten".into() })?;
                    if l.in_features != feat {
                        return Err(Error::dim(format!("layer {idx}: fc input width"), feat, l.in_features));
                    }
                    features = Some(l.out_features);
                }
                LayerState::Relu => {}
            }
        }
        Ok(flatten_spatial)
    }

    /// Check every topology invariant: the dimension chain, tensor shapes and
    /// momentum/mask buffer lengths.
    pub fn validate(&self) -> Result<()> {
        let fs = self.walk_shapes()?;
        if fs != self.flatten_spatial {
            return Err(Error::dim("flatten spatial bookkeeping", self.flatten_spatial, fs));
        }
        for (idx, layer) in self.layers.iter().enumerate() {
            match layer {
                LayerState::Conv(l) => {
                    let wn = l.out_channels * l.in_channels * l.kernel * l.kernel;
                    if l.weights.numel() != wn
                        || l.weights.shape() != [l.out_channels, l.in_channels, l.kernel, l.kernel]
                    {
                        return Err(Error::dim(format!("layer {idx}: conv weight shape"), wn, l.weights.numel()));
                    }
                    if l.bias.numel() != l.out_channels {
                        return Err(Error::dim(format!("layer {idx}: conv bias shape"), l.out_channels, l.bias.numel()));
                    }
                    if l.w_momentum.len() != wn || l.b_momentum.len() != l.out_channels {
                        return Err(Error::dim(format!("layer {idx}: conv momentum shape"), wn, l.w_momentum.len()));
                    }
                    if let Some(m) = &l.w_mask {
                        if m.len() != wn {
                            return Err(Error::dim(format!("layer {idx}: conv mask shape"), wn, m.len()));
                        }
                    }
                }
                LayerState::Fc(l) => {
                    let wn = l.out_features * l.in_features;
                    if l.weights.numel() != wn || l.weights.shape() != [l.out_features, l.in_features] {
                        return Err(Error::dim(format!("layer {idx}: fc weight shape"), wn, l.weights.numel()));
                    }
                    if l.bias.numel() != l.out_features {
                        return Err(Error::dim(format!("layer {idx}: fc bias shape"), l.out_features, l.bias.numel()));
                    }
                    if l.w_momentum.len() != wn || l.b_momentum.len() != l.out_features {
                        return Err(Error::dim(format!("layer {idx}: fc momentum shape"), wn, l.w_momentum.len()));
                    }
                    if let Some(m) = &l.w_mask {
                        if m.len() != wn {
                            return Err(Error::dim(format!("layer {idx}: fc mask shape"), wn, m.len()));
                        }
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }
}

fn in_layer(e: Error, idx: usize) -> Error {
    match e {
        Error::DimensionMismatch { context, expected, got } => Error::DimensionMismatch {
            context: format!("layer {idx}: {context}"),
            expected,
            got,
        },
        other => other,
    }
}

fn check_unit(layer: usize, unit: usize, width: usize) -> Result<()> {
    if unit >= width {
        return Err(Error::UnitOutOfRange { layer, unit, width });
    }
    Ok(())
}

fn init_uniform<S: Scalar, R: Rng>(rng: &mut R, n: usize, fan_in: usize) -> Vec<S> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    (0..n).map(|_| from_f64(rng.gen_range(-bound..bound))).collect()
}

/// Insert `block` (one row of `block_len` elements) at row `pos` of a flat
/// `rows x block_len` buffer.
fn insert_block<T: Copy>(data: &mut Vec<T>, block_len: usize, pos: usize, block: &[T]) {
    debug_assert_eq!(block.len(), block_len);
    let at = pos * block_len;
    data.splice(at..at, block.iter().copied());
}

fn remove_block<T: Copy>(data: &mut Vec<T>, block_len: usize, pos: usize) {
    let at = pos * block_len;
    data.drain(at..at + block_len);
}

/// For a flat `rows x (inner_count * inner_len)` buffer, insert one
/// `inner_len` block per row at inner position `pos`. `new_blocks` holds
/// `rows * inner_len` values, row-major.
fn insert_inner_block<T: Copy>(
    data: &mut Vec<T>,
    inner_count: usize,
    inner_len: usize,
    pos: usize,
    new_blocks: &[T],
) {
    let rows = data.len() / (inner_count * inner_len);
    debug_assert_eq!(new_blocks.len(), rows * inner_len);
    let mut out = Vec::with_capacity(data.len() + rows * inner_len);
    for r in 0..rows {
        let row = &data[r * inner_count * inner_len..(r + 1) * inner_count * inner_len];
        out.extend_from_slice(&row[..pos * inner_len]);
        out.extend_from_slice(&new_blocks[r * inner_len..(r + 1) * inner_len]);
        out.extend_from_slice(&row[pos * inner_len..]);
    }
    *data = out;
}

fn remove_inner_block<T: Copy>(data: &mut Vec<T>, inner_count: usize, inner_len: usize, pos: usize) {
    let rows = data.len() / (inner_count * inner_len);
    let mut out = Vec::with_capacity(data.len() - rows * inner_len);
    for r in 0..rows {
        let row = &data[r * inner_count * inner_len..(r + 1) * inner_count * inner_len];
        out.extend_from_slice(&row[..pos * inner_len]);
        out.extend_from_slice(&row[(pos + 1) * inner_len..]);
    }
    *data = out;
}

/// Insert a column into an fc layer's weight matrix (with zero momentum and
/// an unmasked slot when a mask is present).
fn insert_column<S: Scalar>(f: &mut FcLayer<S>, pos: usize, col: &[S]) {
    let old_i = f.in_features;
    insert_inner_block(f.weights.data_mut_vec(), old_i, 1, pos, col);
    f.weights.reshape_in_place(&[f.out_features, old_i + 1]);
    insert_inner_block(&mut f.w_momentum, old_i, 1, pos, &vec![S::zero(); f.out_features]);
    if let Some(mask) = &mut f.w_mask {
        insert_inner_block(mask, old_i, 1, pos, &vec![false; f.out_features]);
    }
    f.in_features += 1;
}

fn remove_column<S: Scalar>(f: &mut FcLayer<S>, pos: usize) {
    let old_i = f.in_features;
    remove_inner_block(f.weights.data_mut_vec(), old_i, 1, pos);
    f.weights.reshape_in_place(&[f.out_features, old_i - 1]);
    remove_inner_block(&mut f.w_momentum, old_i, 1, pos);
    if let Some(mask) = &mut f.w_mask {
        remove_inner_block(mask, old_i, 1, pos);
    }
    f.in_features -= 1;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::{softmax_cross_entropy, softmax_cross_entropy_backward};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn lenet(widths: [usize; 4], rng: &mut ChaCha8Rng) -> NetworkTopology<f64> {
        NetworkTopology::feedforward(
            (1, 28, 28),
            &[widths[0], widths[1]],
            5,
            &[widths[2]],
            widths[3],
            rng,
        )
        .unwrap()
    }

    fn batch(rng: &mut ChaCha8Rng, b: usize, shape: (usize, usize, usize)) -> Tensor<f64> {
        use rand::Rng;
        let n = b * shape.0 * shape.1 * shape.2;
        let data = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        Tensor::from_vec(&[b, shape.0, shape.1, shape.2], data).unwrap()
    }

    #[test]
    fn lenet_forward_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = lenet([20, 50, 500, 10], &mut rng);
        let x = batch(&mut rng, 1, (1, 28, 28));
        let logits = net.forward(&x).unwrap();
        assert_eq!(logits.shape(), &[1, 10]);

        let mut seed = lenet([4, 10, 100, 10], &mut rng);
        let logits = seed.forward(&x).unwrap();
        assert_eq!(logits.shape(), &[1, 10]);
        assert_eq!(seed.widths(), vec![4, 10, 100, 10]);
        assert_eq!(seed.flatten_spatial(), 16);
    }

    #[test]
    fn backward_before_forward_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = lenet([2, 3, 10, 10], &mut rng);
        let g = Tensor::zeros(&[1, 10]);
        assert!(matches!(net.backward(&g), Err(Error::BackwardBeforeForward)));
    }

    #[test]
    fn zero_upstream_gives_zero_weight_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = lenet([2, 3, 10, 10], &mut rng);
        let x = batch(&mut rng, 2, (1, 28, 28));
        let logits = net.forward(&x).unwrap();
        net.backward(&Tensor::zeros(logits.shape())).unwrap();
        for l in net.param_layers() {
            let (w, b) = net.params(l).unwrap();
            assert!(w.grad().unwrap().iter().all(|&v| v == 0.0));
            assert!(b.grad().unwrap().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn single_linear_layer_grads_match_analytic_formula() {
        // net = one fc layer; d(loss)/dW = (softmax - onehot)^T . input / B
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = NetworkTopology::<f64>::feedforward((1, 1, 6), &[], 1, &[], 4, &mut rng).unwrap();
        let x = batch(&mut rng, 3, (1, 1, 6));
        let logits = net.forward(&x).unwrap();
        let labels = [0usize, 2, 3];
        let (_, probs) = softmax_cross_entropy(&logits, &labels).unwrap();
        let lg = softmax_cross_entropy_backward(&probs, &labels);
        net.backward(&lg).unwrap();
        let fc_idx = net.param_layers()[0];
        let (w, _) = net.params(fc_idx).unwrap();
        let gw = w.grad().unwrap();
        for o in 0..4 {
            for i in 0..6 {
                let mut expect = 0.0;
                for b in 0..3 {
                    let delta = probs.data()[b * 4 + o] - if labels[b] == o { 1.0 } else { 0.0 };
                    expect += delta / 3.0 * x.data()[b * 6 + i];
                }
                assert!((gw[o * 6 + i] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn insert_filter_grows_consumer_channels() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut net = lenet([8, 10, 20, 10], &mut rng);
        let l0 = net.param_layers()[0];
        let fl = net.conv(l0).unwrap().filter_len();
        let mapped = match net.consumer_input_slice(l0, 3).unwrap() {
            MappedInput::Conv(v) => MappedInput::Conv(v),
            _ => panic!("conv consumer expected"),
        };
        let pos = net.insert_filter(l0, 3, &vec![0.5; fl], 0.0, &mapped).unwrap();
        assert_eq!(pos, 4);
        assert_eq!(net.conv(l0).unwrap().out_channels, 9);
        let l1 = net.param_layers()[1];
        assert_eq!(net.conv(l1).unwrap().in_channels, 9);
        net.validate().unwrap();
    }

    #[test]
    fn insert_filter_across_flatten_adds_contiguous_block() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut net = lenet([4, 50, 500, 10], &mut rng);
        let l1 = net.param_layers()[1];
        let lfc = net.param_layers()[2];
        assert_eq!(net.fc(lfc).unwrap().in_features, 800);
        let fl = net.conv(l1).unwrap().filter_len();
        let fs = net.flatten_spatial();
        assert_eq!(fs, 16);
        // mapped block with a recognizable constant
        let o2 = net.fc(lfc).unwrap().out_features;
        let mapped = MappedInput::Fc(vec![7.25; o2 * fs]);
        net.insert_filter(l1, 10, &vec![0.0; fl], 0.0, &mapped).unwrap();
        let fcl = net.fc(lfc).unwrap();
        assert_eq!(fcl.in_features, 816);
        // newborn channel index 11 owns columns [11*16, 12*16)
        for o in 0..o2 {
            for c in 0..fs {
                assert_eq!(fcl.weights.data()[o * 816 + 11 * fs + c], 7.25);
            }
        }
        net.validate().unwrap();
    }

    #[test]
    fn remove_filter_matches_direct_construction_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut net = lenet([5, 6, 30, 10], &mut rng);
        let before_params = crate::accounting::param_count(&net);
        let l0 = net.param_layers()[0];
        let l1 = net.param_layers()[1];

        // direct construction: same weights minus filter 2 of conv1
        let mut layers = Vec::new();
        for (idx, layer) in net.layers().iter().enumerate() {
            layers.push(match layer {
                LayerState::Conv(c) => {
                    let mut w = c.weights.data().to_vec();
                    let mut b = c.bias.data().to_vec();
                    let mut in_ch = c.in_channels;
                    let mut out_ch = c.out_channels;
                    if idx == l0 {
                        let fl = c.filter_len();
                        w.drain(2 * fl..3 * fl);
                        b.remove(2);
                        out_ch -= 1;
                    } else if idx == l1 {
                        let kk = c.kernel * c.kernel;
                        let mut nw = Vec::new();
                        for o in 0..c.out_channels {
                            for i in 0..c.in_channels {
                                if i != 2 {
                                    let base = (o * c.in_channels + i) * kk;
                                    nw.extend_from_slice(&c.weights.data()[base..base + kk]);
                                }
                            }
                        }
                        w = nw;
                        in_ch -= 1;
                    }
                    LayerState::Conv(ConvLayer::new(out_ch, in_ch, c.kernel, w, b).unwrap())
                }
                LayerState::Fc(f) => LayerState::Fc(
                    FcLayer::new(f.out_features, f.in_features, f.weights.data().to_vec(), f.bias.data().to_vec())
                        .unwrap(),
                ),
                LayerState::Relu => LayerState::Relu,
                LayerState::Pool => LayerState::Pool,
                LayerState::Flatten => LayerState::Flatten,
            });
        }
        let mut oracle = NetworkTopology::from_parts(layers, net.input_shape()).unwrap();

        net.remove_filter(l0, 2).unwrap();
        net.validate().unwrap();
        assert_eq!(net.conv(l0).unwrap().out_channels, 4);
        assert_eq!(net.conv(l1).unwrap().in_channels, 4);

        // param count delta: filter weights + bias + consumer per-unit fan-in
        let after_params = crate::accounting::param_count(&net);
        let fl = 1 * 5 * 5;
        let consumer_slice = 6 * 5 * 5;
        assert_eq!(before_params - after_params, fl + 1 + consumer_slice);

        let mut rng2 = ChaCha8Rng::seed_from_u64(99);
        let x = batch(&mut rng2, 2, (1, 28, 28));
        let a = net.forward(&x).unwrap();
        let b = oracle.forward(&x).unwrap();
        for (va, vb) in a.data().iter().zip(b.data()) {
            assert!((va - vb).abs() < 1e-6);
        }
    }

    #[test]
    fn neuron_insert_remove_roundtrip_and_output_layer_guard() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut net = lenet([4, 10, 100, 10], &mut rng);
        let lfc = net.param_layers()[2];
        let lout = net.param_layers()[3];
        let widths0 = net.widths();

        let (row, bias) = net.fan_in(lfc, 5).unwrap();
        let col = net.fan_out_col(lfc, 5).unwrap();
        let pos = net.insert_neuron(lfc, 5, &row, bias, &col).unwrap();
        assert_eq!(pos, 6);
        assert_eq!(net.fc(lfc).unwrap().out_features, 101);
        assert_eq!(net.fc(lout).unwrap().in_features, 101);
        net.validate().unwrap();

        net.remove_neuron(lfc, pos).unwrap();
        assert_eq!(net.widths(), widths0);
        net.validate().unwrap();

        // output layer is never grown or pruned as units
        assert!(net.insert_neuron(lout, 0, &[], 0.0, &[]).is_err());
        assert!(net.remove_neuron(lout, 0).is_err());
    }

    #[test]
    fn remove_neuron_matches_direct_construction_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut net = NetworkTopology::<f64>::feedforward((1, 1, 8), &[], 1, &[12], 5, &mut rng).unwrap();
        let lfc = net.param_layers()[0];
        let lout = net.param_layers()[1];

        // direct construction without neuron 7
        let f = net.fc(lfc).unwrap();
        let mut w = f.weights.data().to_vec();
        let mut b = f.bias.data().to_vec();
        w.drain(7 * 8..8 * 8);
        b.remove(7);
        let fc1 = FcLayer::new(11, 8, w, b).unwrap();
        let out = net.fc(lout).unwrap();
        let mut w2 = Vec::new();
        for o in 0..5 {
            for i in 0..12 {
                if i != 7 {
                    w2.push(out.weights.data()[o * 12 + i]);
                }
            }
        }
        let fc2 = FcLayer::new(5, 11, w2, out.bias.data().to_vec()).unwrap();
        let mut oracle = NetworkTopology::from_parts(
            vec![
                LayerState::Flatten,
                LayerState::Fc(fc1),
                LayerState::Relu,
                LayerState::Fc(fc2),
            ],
            (1, 1, 8),
        )
        .unwrap();

        net.remove_neuron(lfc, 7).unwrap();
        let x = batch(&mut rng, 3, (1, 1, 8));
        let a = net.forward(&x).unwrap();
        let e = oracle.forward(&x).unwrap();
        for (va, vb) in a.data().iter().zip(e.data()) {
            assert!((va - vb).abs() < 1e-9);
        }
    }

    #[test]
    fn never_remove_last_unit() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut net = NetworkTopology::<f64>::feedforward((1, 6, 6), &[1], 3, &[1], 3, &mut rng).unwrap();
        let l0 = net.param_layers()[0];
        let l1 = net.param_layers()[1];
        assert!(matches!(net.remove_filter(l0, 0), Err(Error::LayerCollapse { .. })));
        assert!(matches!(net.remove_neuron(l1, 0), Err(Error::LayerCollapse { .. })));
    }

    #[test]
    fn structural_edits_bump_version_and_clear_cache() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut net = lenet([4, 10, 20, 10], &mut rng);
        let x = batch(&mut rng, 1, (1, 28, 28));
        net.forward(&x).unwrap();
        let v0 = net.version();
        let l0 = net.param_layers()[0];
        let fl = net.conv(l0).unwrap().filter_len();
        let mapped = net.consumer_input_slice(l0, 0).unwrap();
        net.insert_filter(l0, 0, &vec![0.0; fl], 0.0, &mapped).unwrap();
        assert_eq!(net.version(), v0 + 1);
        let g = Tensor::zeros(&[1, 10]);
        assert!(matches!(net.backward(&g), Err(Error::BackwardBeforeForward)));
    }

    #[test]
    fn random_edit_fuzz_preserves_invariants() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut net = lenet([3, 4, 12, 10], &mut rng);
        let x = batch(&mut rng, 1, (1, 28, 28));
        for step in 0..60 {
            let conv_layers: Vec<usize> = net
                .param_layers()
                .into_iter()
                .filter(|&l| matches!(net.layers()[l], LayerState::Conv(_)))
                .collect();
            let hidden_fc: Vec<usize> = net
                .param_layers()
                .into_iter()
                .filter(|&l| matches!(net.layers()[l], LayerState::Fc(_)) && !net.is_output_layer(l))
                .collect();
            match rng.gen_range(0..4) {
                0 => {
                    let l = conv_layers[rng.gen_range(0..conv_layers.len())];
                    let c = net.conv(l).unwrap();
                    let (w, fl) = (c.out_channels, c.filter_len());
                    let src = rng.gen_range(0..w);
                    let mapped = net.consumer_input_slice(l, src).unwrap();
                    let nb: Vec<f64> = (0..fl).map(|_| rng.gen_range(-0.1..0.1)).collect();
                    net.insert_filter(l, src, &nb, 0.0, &mapped).unwrap();
                }
                1 => {
                    let l = conv_layers[rng.gen_range(0..conv_layers.len())];
                    let w = net.conv(l).unwrap().out_channels;
                    let u = rng.gen_range(0..w);
                    match net.remove_filter(l, u) {
                        Ok(()) => {}
                        Err(Error::LayerCollapse { .. }) => {}
                        Err(e) => panic!("step {step}: {e}"),
                    }
                }
                2 => {
                    let l = hidden_fc[rng.gen_range(0..hidden_fc.len())];
                    let f = net.fc(l).unwrap();
                    let (w, i) = (f.out_features, f.in_features);
                    let src = rng.gen_range(0..w);
                    let row: Vec<f64> = (0..i).map(|_| rng.gen_range(-0.1..0.1)).collect();
                    let col_len = {
                        let c = net.consumer_of(l).unwrap();
                        net.fc(c).unwrap().out_features
                    };
                    let col: Vec<f64> = (0..col_len).map(|_| rng.gen_range(-0.1..0.1)).collect();
                    net.insert_neuron(l, src, &row, 0.0, &col).unwrap();
                }
                _ => {
                    let l = hidden_fc[rng.gen_range(0..hidden_fc.len())];
                    let w = net.fc(l).unwrap().out_features;
                    let u = rng.gen_range(0..w);
                    match net.remove_neuron(l, u) {
                        Ok(()) => {}
                        Err(Error::LayerCollapse { .. }) => {}
                        Err(e) => panic!("step {step}: {e}"),
                    }
                }
            }
            net.validate().unwrap_or_else(|e| panic!("step {step}: {e}"));
            let out = net.forward(&x).unwrap();
            assert!(out.is_finite());
        }
    }
}
