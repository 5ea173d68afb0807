use super::{ArchOptions, LayerKind, LayerRef, ModelKind, NetworkSpec, SpecBuilder};
use crate::error::Result;
use crate::tensor::{Activation, Padding};

const CONTRACTING: [usize; 4] = [8, 16, 32, 64];
const BOTTOM: usize = 128;
/// Expansive stages: (filters, index of the contracting stage to join).
const EXPANSIVE: [(usize, usize); 2] = [(64, 3), (32, 2)];

pub fn build_unet(scale: usize) -> Result<NetworkSpec> {
    build(&ArchOptions::new(scale))
}

pub(super) fn build(o: &ArchOptions) -> Result<NetworkSpec> {
    let (h, w) = o.validate()?;
    let mut b = SpecBuilder::new();
    let mut x = LayerRef::Input;
    let mut skips = Vec::new();

    for (i, &filters) in CONTRACTING.iter().enumerate() {
        let stage = i + 1;
        x = double_conv(&mut b, x, &format!("conv{stage}"), o.channels(filters));
        b.label(x, &format!("Convolution ({stage})"), "3x3 conv x2");
        skips.push(x);
        x = b.push(
            format!("pool{stage}"),
            LayerKind::MaxPool {
                window: 2,
                stride: 2,
                padding: Padding::Valid,
            },
            vec![x],
        );
        b.label(x, "Pooling", "2x2 max pooling");
    }
    x = double_conv(&mut b, x, "conv5", o.channels(BOTTOM));
    b.label(x, "Convolution (5)", "3x3 conv x2");

    for (i, &(filters, skip)) in EXPANSIVE.iter().enumerate() {
        let stage = i + 1;
        let up = b.push(
            format!("up{stage}.deconv"),
            LayerKind::Deconv {
                filters: o.channels(filters),
                kernel: 2,
                stride: 2,
                bias: true,
            },
            vec![x],
        );
        let cat = b.push(format!("up{stage}.concat"), LayerKind::Concat, vec![up, skips[skip]]);
        let drop = b.push(
            format!("up{stage}.dropout"),
            LayerKind::Dropout { rate: o.dropout_rate },
            vec![cat],
        );
        x = double_conv(&mut b, drop, &format!("up{stage}"), o.channels(filters));
        b.label(
            x,
            &format!("Upsampling Layer ({stage})"),
            &format!("2x2 Deconv, [conv layer ({})], dropout, 3x3 conv x2", skip + 1),
        );
    }

    x = b.push(
        "conv6",
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
        "conv6.sigmoid",
        LayerKind::Activation {
            function: Activation::Sigmoid,
        },
        vec![x],
    );
    b.label(x, "Convolution (6)", "1x1 conv");
    b.finish(ModelKind::Unet, [h, w, o.in_channels], o.scale, None)
}

fn double_conv(b: &mut SpecBuilder, mut x: LayerRef, prefix: &str, filters: usize) -> LayerRef {
    for part in ["a", "b"] {
        x = b.push(
            format!("{prefix}{part}"),
            LayerKind::Conv {
                filters,
                kernel: 3,
                stride: 1,
                padding: Padding::Same,
                bias: true,
            },
            vec![x],
        );
        x = b.push(
            format!("{prefix}{part}.elu"),
            LayerKind::Activation {
                function: Activation::Elu,
            },
            vec![x],
        );
    }
    x
}
