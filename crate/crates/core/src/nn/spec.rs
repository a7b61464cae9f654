use super::NnError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

/// One layer descriptor. Input widths and channel counts are inferred from the
/// preceding layer when the network is compiled.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerSpec {
    /// Cubic kernel (`kernel` per spatial axis), zero padding on every side.
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    /// Non-overlapping max pool; trailing remainders are dropped.
    MaxPool { window: usize },
    /// Fully connected layer on a flat input.
    Dense { out: usize },
    Act(Activation),
    Flatten,
}

/// Ordered layer list with declared input and output extents (batch axis excluded).
#[derive(Clone, Debug, PartialEq)]
pub struct NetSpec {
    pub input: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    /// Final reshape applied to the last layer's flat output.
    pub output: Vec<usize>,
}

impl NetSpec {
    /// Output extents after every layer, validated.
    pub fn layer_shapes(&self) -> Result<Vec<Vec<usize>>, NnError> {
        if self.input.is_empty() || self.input.iter().any(|&e| e == 0) {
            return Err(NnError::config(None, format!("bad input extents {:?}", self.input)));
        }
        let mut shapes = Vec::with_capacity(self.layers.len());
        let mut cur = self.input.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            cur = match *layer {
                LayerSpec::Conv { out_channels, kernel, stride, padding } => {
                    if cur.len() < 2 || cur.len() > 4 {
                        return Err(NnError::config(
                            Some(i),
                            format!("convolution needs [channels, 1-3 spatial axes], got {cur:?}"),
                        ));
                    }
                    if out_channels == 0 || kernel == 0 || stride == 0 {
                        return Err(NnError::config(Some(i), "zero-sized convolution".into()));
                    }
                    let mut next = vec![out_channels];
                    for &e in &cur[1..] {
                        let padded = e + 2 * padding;
                        if padded < kernel {
                            return Err(NnError::config(
                                Some(i),
                                format!("kernel {kernel} larger than padded extent {padded}"),
                            ));
                        }
                        next.push((padded - kernel) / stride + 1);
                    }
                    next
                }
                LayerSpec::MaxPool { window } => {
                    if cur.len() < 2 || window == 0 {
                        return Err(NnError::config(Some(i), format!("max-pool on {cur:?}")));
                    }
                    let mut next = vec![cur[0]];
                    for &e in &cur[1..] {
                        if e < window {
                            return Err(NnError::config(
                                Some(i),
                                format!("pool window {window} exceeds extent {e}"),
                            ));
                        }
                        next.push(e / window);
                    }
                    next
                }
                LayerSpec::Dense { out } => {
                    if cur.len() != 1 {
                        return Err(NnError::config(
                            Some(i),
                            format!("fully-connected layer needs a flat input, got {cur:?}"),
                        ));
                    }
                    if out == 0 {
                        return Err(NnError::config(Some(i), "zero-width layer".into()));
                    }
                    vec![out]
                }
                LayerSpec::Act(_) => cur,
                LayerSpec::Flatten => vec![cur.iter().product()],
            };
            shapes.push(cur.clone());
        }
        let last: usize = cur.iter().product();
        let declared: usize = self.output.iter().product();
        if self.output.is_empty() || last != declared {
            return Err(NnError::config(
                self.layers.len().checked_sub(1),
                format!("final extents {cur:?} do not reshape to {:?}", self.output),
            ));
        }
        Ok(shapes)
    }

    /// Fully connected stack: `Dense(w) -> Relu` per hidden width, then a linear output layer.
    pub fn mlp(inputs: usize, hidden: &[usize], outputs: usize) -> Self {
        let mut layers = Vec::new();
        for &w in hidden {
            layers.push(LayerSpec::Dense { out: w });
            layers.push(LayerSpec::Act(Activation::Relu));
        }
        layers.push(LayerSpec::Dense { out: outputs });
        Self { input: vec![inputs], layers, output: vec![outputs] }
    }

    /// Convolution/max-pool trunk followed by a fully connected head.
    ///
    /// `conv_channels` has one more entry than the number of pools: pools are
    /// interleaved between consecutive convolutions.
    pub fn conv_trunk(
        input: Vec<usize>,
        conv_channels: &[usize],
        kernel: usize,
        pool: usize,
        dense: &[usize],
        output: Vec<usize>,
    ) -> Self {
        let mut layers = Vec::new();
        for (i, &c) in conv_channels.iter().enumerate() {
            layers.push(LayerSpec::Conv { out_channels: c, kernel, stride: 1, padding: kernel / 2 });
            layers.push(LayerSpec::Act(Activation::Relu));
            if i + 1 < conv_channels.len() {
                layers.push(LayerSpec::MaxPool { window: pool });
            }
        }
        layers.push(LayerSpec::Flatten);
        for (i, &w) in dense.iter().enumerate() {
            layers.push(LayerSpec::Dense { out: w });
            if i + 1 < dense.len() {
                layers.push(LayerSpec::Act(Activation::Relu));
            }
        }
        Self { input, layers, output }
    }

    pub fn weight_count(&self) -> Result<usize, NnError> {
        let shapes = self.layer_shapes()?;
        let mut prev = self.input.clone();
        let mut total = 0;
        for (layer, shape) in self.layers.iter().zip(&shapes) {
            match *layer {
                LayerSpec::Conv { out_channels, kernel, .. } => {
                    let k = kernel.pow((prev.len() - 1) as u32);
                    total += out_channels * prev[0] * k + out_channels;
                }
                LayerSpec::Dense { out } => total += out * prev[0] + out,
                _ => {}
            }
            prev = shape.clone();
        }
        Ok(total)
    }
}
