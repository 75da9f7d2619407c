use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::FrameSize;

/// Activation volume, channels first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Layer {
    /// Valid (unpadded) convolution with square kernels.
    Conv {
        kernel: usize,
        out_channels: usize,
        stride: usize,
    },
    Relu,
    MaxPool {
        window: usize,
        stride: usize,
    },
    FullyConnected {
        out: usize,
    },
    Softmax,
}

impl Layer {
    pub fn has_params(&self) -> bool {
        matches!(self, Layer::Conv { .. } | Layer::FullyConnected { .. })
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        let window = |size: usize, k: usize, s: usize| -> Option<usize> {
            (k >= 1 && s >= 1 && size >= k).then(|| (size - k) / s + 1)
        };
        match *self {
            Layer::Conv {
                kernel,
                out_channels,
                stride,
            } => {
                let h = window(input.height, kernel, stride);
                let w = window(input.width, kernel, stride);
                match (h, w) {
                    (Some(h), Some(w)) if out_channels > 0 => Ok(Shape::new(out_channels, h, w)),
                    _ => Err(Error::ShapeMismatch(format!(
                        "convolution {kernel}x{kernel}/{stride} does not fit {input:?}"
                    ))),
                }
            }
            Layer::MaxPool { window: k, stride } => {
                match (window(input.height, k, stride), window(input.width, k, stride)) {
                    (Some(h), Some(w)) => Ok(Shape::new(input.channels, h, w)),
                    _ => Err(Error::ShapeMismatch(format!(
                        "pool {k}/{stride} does not fit {input:?}"
                    ))),
                }
            }
            Layer::Relu | Layer::Softmax => Ok(input),
            Layer::FullyConnected { out } if out > 0 => Ok(Shape::new(out, 1, 1)),
            Layer::FullyConnected { .. } => Err(Error::ShapeMismatch("empty fully-connected layer".into())),
        }
    }
}

/// Network architecture. The last layer must be a softmax over two classes
/// (background, pedestrian); `feature_layer` names the layer whose output is
/// exported as the region descriptor.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ConvNetSpec {
    pub input: Shape,
    pub layers: Vec<Layer>,
    pub feature_layer: usize,
}

impl ConvNetSpec {
    /// Shapes after each layer, validating the whole stack.
    pub fn layer_shapes(&self) -> Result<Vec<Shape>> {
        if self.input.is_empty() {
            return Err(Error::ShapeMismatch("empty input shape".into()));
        }
        let mut shapes = Vec::with_capacity(self.layers.len());
        let mut cur = self.input;
        for (i, layer) in self.layers.iter().enumerate() {
            if matches!(layer, Layer::Softmax) && i + 1 != self.layers.len() {
                return Err(Error::ShapeMismatch(format!("softmax at layer {i} is not last")));
            }
            cur = layer.output_shape(cur)?;
            shapes.push(cur);
        }
        match self.layers.last() {
            Some(Layer::Softmax) if cur.len() == 2 => {}
            _ => return Err(Error::ShapeMismatch("network must end with a 2-way softmax".into())),
        }
        if self.feature_layer + 1 >= self.layers.len() {
            return Err(Error::ShapeMismatch(format!(
                "feature layer {} must precede the final layer",
                self.feature_layer
            )));
        }
        Ok(shapes)
    }

    pub fn validate(&self) -> Result<()> {
        self.layer_shapes().map(|_| ())
    }

    pub fn feature_len(&self) -> Result<usize> {
        Ok(self.layer_shapes()?[self.feature_layer].len())
    }

    pub fn input_size(&self) -> FrameSize {
        FrameSize::new(self.input.width, self.input.height)
    }

    /// 64x32 RGB input: two conv/ReLU/pool stages (16 and 32 channels,
    /// 5x5 kernels), a 128-wide hidden layer and the 2-way classifier.
    /// Features are the rectified 128-wide activations.
    pub fn desk() -> Self {
        Self {
            input: Shape::new(3, 64, 32),
            layers: alloc::vec![
                Layer::Conv {
                    kernel: 5,
                    out_channels: 16,
                    stride: 1
                },
                Layer::Relu,
                Layer::MaxPool { window: 2, stride: 2 },
                Layer::Conv {
                    kernel: 5,
                    out_channels: 32,
                    stride: 1
                },
                Layer::Relu,
                Layer::MaxPool { window: 2, stride: 2 },
                Layer::FullyConnected { out: 128 },
                Layer::Relu,
                Layer::FullyConnected { out: 2 },
                Layer::Softmax,
            ],
            feature_layer: 7,
        }
    }

    /// Smaller variant for 32x16 RGB input, used where many thousands of
    /// windows have to be scored quickly.
    pub fn compact() -> Self {
        Self {
            input: Shape::new(3, 32, 16),
            layers: alloc::vec![
                Layer::Conv {
                    kernel: 5,
                    out_channels: 8,
                    stride: 1
                },
                Layer::Relu,
                Layer::MaxPool { window: 2, stride: 2 },
                Layer::Conv {
                    kernel: 3,
                    out_channels: 16,
                    stride: 1
                },
                Layer::Relu,
                Layer::MaxPool { window: 2, stride: 2 },
                Layer::FullyConnected { out: 32 },
                Layer::Relu,
                Layer::FullyConnected { out: 2 },
                Layer::Softmax,
            ],
            feature_layer: 7,
        }
    }

    /// Square input variant of the desk network (e.g. 227x227).
    pub fn square(side: usize) -> Self {
        Self {
            input: Shape::new(3, side, side),
            ..Self::desk()
        }
    }
}
