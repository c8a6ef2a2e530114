use super::{ActivationSpec, ConvSpec, GraphBuilder, GraphError, NetworkGraph, NodeKind, SkipEdge};

/// Residual CNN: conv stem, `blocks` residual blocks, global mean pool and
/// a linear classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct ResNetSpec {
    pub blocks: usize,
    pub channels: usize,
    pub activations_per_block: usize,
    pub in_channels: usize,
    pub image: usize,
    pub classes: usize,
    pub activation: ActivationSpec,
}

impl Default for ResNetSpec {
    fn default() -> Self {
        ResNetSpec {
            blocks: 3,
            channels: 16,
            activations_per_block: 3,
            in_channels: 3,
            image: 32,
            classes: 10,
            activation: ActivationSpec::Relu,
        }
    }
}

/// ConvNeXt-style CNN: each block is depthwise 7x7 conv, batch norm,
/// pointwise expansion, GELU and pointwise projection around a residual.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvNextSpec {
    pub blocks: usize,
    pub channels: usize,
    pub expansion: usize,
    pub in_channels: usize,
    pub image: usize,
    pub classes: usize,
}

impl Default for ConvNextSpec {
    fn default() -> Self {
        ConvNextSpec {
            blocks: 3,
            channels: 16,
            expansion: 1,
            in_channels: 3,
            image: 32,
            classes: 10,
        }
    }
}

fn position(layers: &[usize], id: usize) -> usize {
    layers.iter().position(|&l| l == id).expect("block ends are layers")
}

fn stem(b: &mut GraphBuilder, in_channels: usize, image: usize, channels: usize) -> Result<usize, GraphError> {
    let x = b.input(&[in_channels, image, image]);
    let c = b.add(NodeKind::Conv(ConvSpec::same(channels, 3)), &[x])?;
    b.add(NodeKind::BatchNorm, &[c])
}

fn head(b: &mut GraphBuilder, x: usize, classes: usize) -> Result<(), GraphError> {
    let p = b.add(NodeKind::MeanPool { window: 0 }, &[x])?;
    let fc = b.add(
        NodeKind::FullyConnected {
            out_features: classes,
            bias: true,
        },
        &[p],
    )?;
    b.add(NodeKind::Output, &[fc])?;
    Ok(())
}

impl ResNetSpec {
    pub fn build(&self) -> Result<NetworkGraph, GraphError> {
        if self.blocks == 0 || self.activations_per_block == 0 {
            return Err(GraphError::Build("toy ResNet needs at least one block and one activation".into()));
        }
        let mut b = GraphBuilder::new();
        let mut x = stem(&mut b, self.in_channels, self.image, self.channels)?;
        let mut ends = Vec::new();
        for _ in 0..self.blocks {
            let block_in = x;
            let mut h = x;
            for k in 0..self.activations_per_block {
                h = b.add(NodeKind::Conv(ConvSpec::same(self.channels, 3)), &[h])?;
                h = b.add(NodeKind::BatchNorm, &[h])?;
                if k + 1 < self.activations_per_block {
                    h = b.add(NodeKind::Activation(self.activation.clone()), &[h])?;
                }
            }
            let bn = h;
            x = b.add(NodeKind::Activation(self.activation.clone()), &[bn])?;
            ends.push((block_in, bn));
        }
        head(&mut b, x, self.classes)?;
        let backbone = b.finish()?;
        let layers = backbone.layers();
        let skips: Vec<SkipEdge> = ends
            .into_iter()
            .map(|(i, j)| SkipEdge {
                i: position(&layers, i),
                j: position(&layers, j),
                a: 1.0,
            })
            .collect();
        let g = backbone.with_skips(&skips)?;
        g.validate()?;
        Ok(g)
    }
}

impl ConvNextSpec {
    pub fn build(&self) -> Result<NetworkGraph, GraphError> {
        if self.blocks == 0 || self.expansion == 0 {
            return Err(GraphError::Build("toy ConvNeXt needs at least one block".into()));
        }
        let c = self.channels;
        let mut b = GraphBuilder::new();
        let mut x = stem(&mut b, self.in_channels, self.image, c)?;
        let mut ends = Vec::new();
        for _ in 0..self.blocks {
            let block_in = x;
            let dw = ConvSpec {
                groups: c,
                ..ConvSpec::same(c, 7)
            };
            let mut h = b.add(NodeKind::Conv(dw), &[x])?;
            h = b.add(NodeKind::BatchNorm, &[h])?;
            h = b.add(NodeKind::Conv(ConvSpec::same(c * self.expansion, 1)), &[h])?;
            h = b.add(NodeKind::Activation(ActivationSpec::Gelu), &[h])?;
            h = b.add(NodeKind::Conv(ConvSpec::same(c, 1)), &[h])?;
            ends.push((block_in, h));
            x = h;
        }
        head(&mut b, x, self.classes)?;
        let backbone = b.finish()?;
        let layers = backbone.layers();
        let skips: Vec<SkipEdge> = ends
            .into_iter()
            .map(|(i, j)| SkipEdge {
                i: position(&layers, i),
                j: position(&layers, j),
                a: 1.0,
            })
            .collect();
        let g = backbone.with_skips(&skips)?;
        g.validate()?;
        Ok(g)
    }
}

/// Toy ResNet with ReLU activations and otherwise default sizes.
pub fn build_toy_resnet(blocks: usize, channels: usize) -> Result<NetworkGraph, GraphError> {
    ResNetSpec {
        blocks,
        channels,
        ..ResNetSpec::default()
    }
    .build()
}

pub fn build_toy_convnext(blocks: usize, channels: usize) -> Result<NetworkGraph, GraphError> {
    ConvNextSpec {
        blocks,
        channels,
        ..ConvNextSpec::default()
    }
    .build()
}
