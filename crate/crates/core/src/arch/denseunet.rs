use serde::{Deserialize, Serialize};

use super::{ArchOptions, LayerKind, LayerRef, ModelKind, NetworkSpec, SpecBuilder};
use crate::error::{Error, Result};
use crate::tensor::{Activation, Padding};

/// Conv blocks per dense block; the fourth DenseNet-121 block is dropped.
const BLOCKS: [usize; 3] = [6, 12, 16];
const DECODER: [usize; 2] = [96, 64];
const DEFAULT_GROWTH: usize = 32;
/// Bottleneck width of each 1×1 conv, in multiples of the growth rate.
const BOTTLENECK: usize = 4;
/// Each conv block runs two (1×1, 3×3) groups.
const GROUPS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenseBlockSpec {
    pub num_conv_blocks: usize,
    pub growth_rate: usize,
}

impl DenseBlockSpec {
    pub fn channels_after(&self, channels_before: usize) -> usize {
        channels_before + self.num_conv_blocks * GROUPS * self.growth_rate
    }
}

pub fn build_denseunet(scale: usize, growth_rate: Option<usize>) -> Result<NetworkSpec> {
    let mut o = ArchOptions::new(scale);
    o.growth_rate = growth_rate;
    build(&o)
}

pub(super) fn build(o: &ArchOptions) -> Result<NetworkSpec> {
    let (h, w) = o.validate()?;
    let g = o.growth_rate.unwrap_or_else(|| o.channels(DEFAULT_GROWTH));
    if g == 0 {
        return Err(Error::config("growth rate must be positive"));
    }
    let mut b = SpecBuilder::new();

    let mut x = b.push(
        "stem.conv",
        LayerKind::Conv {
            filters: 2 * g,
            kernel: 7,
            stride: 2,
            padding: Padding::Same,
            bias: false,
        },
        vec![LayerRef::Input],
    );
    x = b.push("stem.bn", LayerKind::BatchNorm, vec![x]);
    x = b.push(
        "stem.relu",
        LayerKind::Activation {
            function: Activation::Relu,
        },
        vec![x],
    );
    b.label(x, "Convolution (1)", "7×7 convs, stride 2");
    x = b.push(
        "stem.pool",
        LayerKind::MaxPool {
            window: 3,
            stride: 2,
            padding: Padding::Same,
        },
        vec![x],
    );
    b.label(x, "Pooling", "3×3 max pooling, stride 2");

    let mut channels = 2 * g;
    let mut block_outputs = Vec::new();
    for (i, &n) in BLOCKS.iter().enumerate() {
        let id = i + 1;
        let spec = DenseBlockSpec {
            num_conv_blocks: n,
            growth_rate: g,
        };
        x = dense_block(&mut b, x, &format!("db{id}"), spec);
        channels = spec.channels_after(channels);
        b.label(
            x,
            &format!("Dense Block ({id})"),
            &format!("conv block {{(1x1 convs, 3x3 convs) x 2}} x {n}"),
        );
        block_outputs.push(x);
        if id < BLOCKS.len() {
            channels /= 2;
            x = bn_conv(&mut b, x, &format!("trans{id}"), channels, 1);
            b.label(x, &format!("Transition Layer ({id})"), "1×1 convs");
            x = b.push(
                format!("trans{id}.pool"),
                LayerKind::AvgPool {
                    window: 2,
                    stride: 2,
                    padding: Padding::Valid,
                },
                vec![x],
            );
            b.label(x, "", "2×2 average pool, stride 2");
        }
    }

    for (i, &filters) in DECODER.iter().enumerate() {
        let stage = i + 1;
        let partner = BLOCKS.len() - 1 - stage;
        let up = b.push(format!("up{stage}.upsample"), LayerKind::Upsample { factor: 2 }, vec![x]);
        let cat = b.push(
            format!("up{stage}.concat"),
            LayerKind::Concat,
            vec![up, block_outputs[partner]],
        );
        let bn = b.push(format!("up{stage}.bn"), LayerKind::BatchNorm, vec![cat]);
        let act = b.push(
            format!("up{stage}.elu"),
            LayerKind::Activation {
                function: Activation::Elu,
            },
            vec![bn],
        );
        let drop = b.push(
            format!("up{stage}.dropout"),
            LayerKind::Dropout { rate: o.dropout_rate },
            vec![act],
        );
        x = b.push(
            format!("up{stage}.conv"),
            LayerKind::Conv {
                filters: o.channels(filters),
                kernel: 3,
                stride: 1,
                padding: Padding::Same,
                bias: true,
            },
            vec![drop],
        );
        b.label(
            x,
            &format!("Upsampling Layer ({stage})"),
            &format!(
                "2×2 Upsampling [Dense Block {}], {} conv2",
                partner + 1,
                o.channels(filters)
            ),
        );
    }

    x = b.push(
        "conv2",
        LayerKind::Conv {
            filters: 1,
            kernel: 1,
            stride: 1,
            padding: Padding::Same,
            bias: true,
        },
        vec![x],
    );
    x = b.push(
        "conv2.sigmoid",
        LayerKind::Activation {
            function: Activation::Sigmoid,
        },
        vec![x],
    );
    b.label(x, "Convolution (2)", "1×1 conv");
    b.finish(ModelKind::Denseunet, [h, w, o.in_channels], o.scale, Some(g))
}

/// Each group reads the concatenation of the block input and every earlier
/// group output, and contributes `g` channels.
fn dense_block(b: &mut SpecBuilder, mut x: LayerRef, prefix: &str, spec: DenseBlockSpec) -> LayerRef {
    let g = spec.growth_rate;
    for k in 1..=spec.num_conv_blocks {
        for group in 1..=GROUPS {
            let p = format!("{prefix}.b{k}.g{group}");
            let y = bn_conv(b, x, &format!("{p}.1x1"), BOTTLENECK * g, 1);
            let y = bn_conv(b, y, &format!("{p}.3x3"), g, 3);
            x = b.push(format!("{p}.concat"), LayerKind::Concat, vec![x, y]);
        }
    }
    x
}

/// BN-ReLU-Conv; the conv has no bias since BN follows it downstream.
fn bn_conv(b: &mut SpecBuilder, x: LayerRef, prefix: &str, filters: usize, kernel: usize) -> LayerRef {
    let x = b.push(format!("{prefix}.bn"), LayerKind::BatchNorm, vec![x]);
    let x = b.push(
        format!("{prefix}.relu"),
        LayerKind::Activation {
            function: Activation::Relu,
        },
        vec![x],
    );
    b.push(
        format!("{prefix}.conv"),
        LayerKind::Conv {
            filters,
            kernel,
            stride: 1,
            padding: Padding::Same,
            bias: false,
        },
        vec![x],
    )
}
