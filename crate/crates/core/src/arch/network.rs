use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use super::{shape_trace, LayerKind, LayerRef, NetworkSpec};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::tensor::{Graph, Mode, ParamId, ParamStore, Real, RunningStats, Tensor, Var, BN_EPSILON};

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Slot {
    /// Conv/deconv kernel, or BN gamma.
    weight: Option<ParamId>,
    /// Conv/deconv bias, or BN beta.
    bias: Option<ParamId>,
}

/// A [`NetworkSpec`] with allocated parameters and batch-norm statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T: Real = f32> {
    spec: NetworkSpec,
    params: ParamStore<T>,
    slots: Vec<Slot>,
    stats: Vec<Option<RunningStats<T>>>,
    freeze_batchnorm: bool,
}

impl<T: Real> Network<T> {
    /// Glorot-uniform kernels from `seed`, zero biases, unit BN scale.
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self> {
        let trace = shape_trace(&spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut slots = Vec::with_capacity(spec.layers.len());
        let mut stats = Vec::with_capacity(spec.layers.len());
        for (i, layer) in spec.layers.iter().enumerate() {
            let in_c = match layer.inputs[0] {
                LayerRef::Input => spec.input_shape[2],
                LayerRef::Layer(j) => trace[j].shape[2],
            };
            let mut slot = Slot::default();
            let mut stat = None;
            match layer.kind {
                LayerKind::Conv {
                    filters,
                    kernel,
                    stride,
                    bias,
                    ..
                }
                | LayerKind::Deconv {
                    filters,
                    kernel,
                    stride,
                    bias,
                } => {
                    let fan_in = kernel * kernel * in_c;
                    // A transposed conv's output pixel sees ⌈k/s⌉² taps per input channel.
                    let fan_out = if matches!(layer.kind, LayerKind::Deconv { .. }) {
                        kernel.div_ceil(stride).pow(2) * filters
                    } else {
                        kernel * kernel * filters
                    };
                    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    let uniform = Uniform::new_inclusive(-limit, limit).map_err(|e| Error::config(e.to_string()))?;
                    let n = kernel * kernel * in_c * filters;
                    let data = (0..n).map(|_| T::from_f64(uniform.sample(&mut rng))).collect();
                    let w = Tensor::new(vec![kernel, kernel, in_c, filters], data)?;
                    slot.weight = Some(params.add(format!("{}.weight", layer.name), w)?);
                    if bias {
                        slot.bias = Some(params.add(format!("{}.bias", layer.name), Tensor::zeros(&[filters]))?);
                    }
                }
                LayerKind::BatchNorm => {
                    slot.weight = Some(params.add(
                        format!("{}.gamma", layer.name),
                        Tensor::full(&[in_c], T::one()),
                    )?);
                    slot.bias = Some(params.add(format!("{}.beta", layer.name), Tensor::zeros(&[in_c]))?);
                    stat = Some(RunningStats::new(in_c));
                }
                _ => {}
            }
            debug_assert_eq!(slots.len(), i);
            slots.push(slot);
            stats.push(stat);
        }
        Ok(Self {
            spec,
            params,
            slots,
            stats,
            freeze_batchnorm: false,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// Running statistics of each batch-norm layer, keyed by layer name.
    pub fn running_stats(&self) -> impl Iterator<Item = (&str, &RunningStats<T>)> {
        self.spec
            .layers
            .iter()
            .zip(&self.stats)
            .filter_map(|(l, s)| s.as_ref().map(|s| (l.name.as_str(), s)))
    }

    /// When set, batch norm uses its running statistics even in train mode
    /// and leaves them untouched.
    pub fn set_freeze_batchnorm(&mut self, freeze: bool) {
        self.freeze_batchnorm = freeze;
    }

    pub fn batchnorm_frozen(&self) -> bool {
        self.freeze_batchnorm
    }

    /// Records the forward pass of an N×H×W×C batch onto `g`.
    pub fn forward<R: Rng + ?Sized>(&mut self, g: &mut Graph<T>, x: Var, mode: Mode, rng: &mut R) -> Result<Var> {
        let [_, h, w, c] = g.value(x).nhwc()?;
        if [h, w, c] != self.spec.input_shape {
            return Err(Error::shape(format!(
                "network expects {:?} inputs, got {h}×{w}×{c}",
                self.spec.input_shape
            )));
        }
        let bn_mode = if self.freeze_batchnorm { Mode::Eval } else { mode };
        let mut outs: Vec<Var> = Vec::with_capacity(self.spec.layers.len());
        for (i, layer) in self.spec.layers.iter().enumerate() {
            let src = |r: LayerRef| match r {
                LayerRef::Input => x,
                LayerRef::Layer(j) => outs[j],
            };
            let a = src(layer.inputs[0]);
            let slot = self.slots[i];
            let weight = slot.weight.map(|id| g.param(&self.params, id));
            let bias = slot.bias.map(|id| g.param(&self.params, id));
            let y = match layer.kind {
                LayerKind::Conv { stride, padding, .. } => {
                    g.conv2d(a, weight.expect("conv weight"), bias, stride, padding)?
                }
                LayerKind::Deconv { stride, .. } => g.deconv2d(a, weight.expect("deconv weight"), bias, stride)?,
                LayerKind::MaxPool { window, stride, padding } => g.maxpool2d(a, window, stride, padding)?,
                LayerKind::AvgPool { window, stride, padding } => g.avgpool2d(a, window, stride, padding)?,
                LayerKind::Upsample { factor } => g.upsample2d_nearest(a, factor)?,
                LayerKind::Concat => g.concat_channels(a, src(layer.inputs[1]))?,
                LayerKind::BatchNorm => {
                    let stats = self.stats[i].as_mut().expect("batchnorm statistics");
                    g.batchnorm(
                        a,
                        weight.expect("gamma"),
                        bias.expect("beta"),
                        stats,
                        bn_mode,
                        BN_EPSILON,
                    )?
                }
                LayerKind::Activation { function } => g.activation(a, function)?,
                LayerKind::Dropout { rate } => g.dropout(a, rate, mode, rng)?,
            };
            outs.push(y);
        }
        Ok(outs.last().copied().unwrap_or(x))
    }

    /// Eval-mode forward of a batch, returning the output tensor.
    pub fn infer(&mut self, input: Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let x = g.input(input);
        // Dropout is the identity in eval mode, so the RNG is never drawn.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y = self.forward(&mut g, x, Mode::Eval, &mut rng)?;
        Ok(g.value(y).clone())
    }

    /// Parameters, then running statistics, in layer order.
    pub fn to_checkpoint(&self, metadata: impl Into<String>) -> Checkpoint {
        let mut entries: Vec<(String, Tensor<f32>)> =
            self.params.iter().map(|p| (p.name.clone(), p.tensor.cast())).collect();
        for (name, s) in self.running_stats() {
            let c = s.mean.len();
            let cast = |v: &[T]| Tensor::new(vec![c], v.iter().map(|x| x.as_f64() as f32).collect());
            entries.push((format!("{name}.running_mean"), cast(&s.mean).expect("length c")));
            entries.push((format!("{name}.running_var"), cast(&s.var).expect("length c")));
        }
        Checkpoint::new(entries, metadata)
    }

    /// Copies every tensor out of `ck`, which must hold exactly this
    /// network's entries with matching shapes.
    pub fn load_checkpoint(&mut self, ck: &Checkpoint) -> Result<()> {
        let expected = self.params.len() + 2 * self.stats.iter().flatten().count();
        if ck.entries.len() != expected {
            return Err(Error::ArchitectureMismatch(format!(
                "checkpoint holds {} tensors, {} network needs {expected}",
                ck.entries.len(),
                self.spec.name
            )));
        }
        let fetch = |name: &str, shape: &[usize]| -> Result<Vec<T>> {
            let t = ck
                .get(name)
                .ok_or_else(|| Error::ArchitectureMismatch(format!("checkpoint lacks {name:?}")))?;
            if t.shape() != shape {
                return Err(Error::ArchitectureMismatch(format!(
                    "{name:?} has shape {:?}, network expects {shape:?}",
                    t.shape()
                )));
            }
            Ok(t.data().iter().map(|v| T::from_f64(*v as f64)).collect())
        };
        let mut values = Vec::with_capacity(self.params.len());
        for p in self.params.iter() {
            values.push(fetch(&p.name, p.tensor.shape())?);
        }
        let mut stat_values = Vec::new();
        for (name, s) in self.running_stats() {
            let c = s.mean.len();
            stat_values.push((
                fetch(&format!("{name}.running_mean"), &[c])?,
                fetch(&format!("{name}.running_var"), &[c])?,
            ));
        }
        for (p, v) in self.params.iter_mut().zip(values) {
            p.tensor.data_mut().copy_from_slice(&v);
            p.velocity.iter_mut().for_each(|x| *x = T::zero());
        }
        for (s, (mean, var)) in self.stats.iter_mut().flatten().zip(stat_values) {
            s.mean = mean;
            s.var = var;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{build_denseunet, build_unet};

    #[test]
    fn checkpoint_round_trip_restores_state() {
        let spec = build_denseunet(8, Some(2)).unwrap();
        let mut a = Network::<f32>::new(spec.clone(), 1).unwrap();
        for (i, s) in a.stats.iter_mut().flatten().enumerate() {
            s.mean.iter_mut().for_each(|m| *m = i as f32 * 0.25);
        }
        let ck = a.to_checkpoint("{}");
        let mut b = Network::<f32>::new(spec, 2).unwrap();
        assert_ne!(a.params, b.params);
        b.load_checkpoint(&ck).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.stats, b.stats);
    }

    #[test]
    fn unet_checkpoint_rejected_by_denseunet() {
        let unet = Network::<f32>::new(build_unet(8).unwrap(), 0).unwrap();
        let mut dense = Network::<f32>::new(build_denseunet(8, Some(4)).unwrap(), 0).unwrap();
        assert!(matches!(
            dense.load_checkpoint(&unet.to_checkpoint("")),
            Err(Error::ArchitectureMismatch(_))
        ));
    }

    #[test]
    fn same_seed_same_weights() {
        let spec = build_unet(8).unwrap();
        assert_eq!(
            Network::<f32>::new(spec.clone(), 5).unwrap().params,
            Network::<f32>::new(spec, 5).unwrap().params
        );
    }
}
