//! Forward evaluation and reverse-mode differentiation of sequential networks.
//!
//! A forward pass can keep every boundary activation in a [`ForwardCache`];
//! the backward pass replays the layers in reverse from that cache. When
//! tracing is requested the backward pass also records the gradient with
//! respect to every layer boundary, which is what the ratio-invariance checks
//! inspect.

use super::params::{ParamKey, ParamSet, Role};
use super::spec::{chw, Activation, ConvGeometry, Layer, NetworkSpec};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Activations recorded by a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// `activations[l]` is the batch input of layer `l`; the last entry is the output.
    activations: Vec<Tensor>,
    params_fingerprint: u64,
    depth: usize,
}

impl ForwardCache {
    pub fn activations(&self) -> &[Tensor] {
        &self.activations
    }

    pub fn output(&self) -> &Tensor {
        self.activations.last().unwrap()
    }

    pub fn batch(&self) -> usize {
        self.activations[0].batch()
    }

    /// Digest of the parameters the pass was run with.
    pub fn params_fingerprint(&self) -> u64 {
        self.params_fingerprint
    }
}

/// One traced boundary: the gradient with respect to the input of layer
/// `boundary` (or the network output when `boundary == depth`).
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    pub boundary: usize,
    pub grad: Tensor,
}

/// Per-layer, per-instance input gradients from one backward pass,
/// ordered from the output toward the input.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerTrace {
    pub records: Vec<TraceRecord>,
    pub batch_ids: Vec<usize>,
}

impl LayerTrace {
    pub fn record(&self, boundary: usize) -> Option<&TraceRecord> {
        self.records.iter().find(|r| r.boundary == boundary)
    }
}

#[derive(Clone, Debug)]
pub struct Backward {
    pub input_grad: Tensor,
    /// Absent when the pass was run for input gradients only.
    pub param_grads: Option<ParamSet>,
    pub trace: Option<LayerTrace>,
}

/// Evaluates `net` on a batch. With `keep_cache` the returned cache supports
/// an exact backward pass.
pub fn forward_network(
    net: &NetworkSpec,
    params: &ParamSet,
    input: &Tensor,
    keep_cache: bool,
) -> Result<(Tensor, Option<ForwardCache>)> {
    params.check_matches(net)?;
    if input.instance_shape() != net.input_shape.as_slice() {
        return Err(Error::Shape {
            layer: 0,
            detail: format!(
                "input instance shape {:?} does not match network input {:?}",
                input.instance_shape(),
                net.input_shape
            ),
        });
    }
    let shapes = net.layer_shapes()?;
    let mut cache = keep_cache.then(|| Vec::with_capacity(net.depth() + 1));
    let mut current = input.clone();
    for (l, layer) in net.layers.iter().enumerate() {
        let next = forward_layer(layer, l, params, &current, &shapes[l + 1])?;
        if !next.is_finite() {
            return Err(Error::Overflow { layer: l });
        }
        if let Some(c) = cache.as_mut() {
            c.push(std::mem::replace(&mut current, next));
        } else {
            current = next;
        }
    }
    let cache = cache.map(|mut activations| {
        activations.push(current.clone());
        ForwardCache {
            activations,
            params_fingerprint: params.fingerprint(),
            depth: net.depth(),
        }
    });
    Ok((current, cache))
}

/// Exact reverse-mode gradients for the scalar whose output gradient is `output_grad`.
pub fn backward_network(
    net: &NetworkSpec,
    params: &ParamSet,
    cache: &ForwardCache,
    output_grad: &Tensor,
    trace: bool,
) -> Result<Backward> {
    backward_impl(net, params, cache, output_grad, trace, true)
}

/// Like [`backward_network`] but skips parameter gradients (frozen networks).
pub fn backward_input(
    net: &NetworkSpec,
    params: &ParamSet,
    cache: &ForwardCache,
    output_grad: &Tensor,
    trace: bool,
) -> Result<Backward> {
    backward_impl(net, params, cache, output_grad, trace, false)
}

fn backward_impl(
    net: &NetworkSpec,
    params: &ParamSet,
    cache: &ForwardCache,
    output_grad: &Tensor,
    trace: bool,
    want_params: bool,
) -> Result<Backward> {
    if cache.depth != net.depth() || cache.activations.len() != net.depth() + 1 {
        return Err(Error::Usage(
            "forward cache was produced by a different network".into(),
        ));
    }
    if cache.params_fingerprint != params.fingerprint() {
        return Err(Error::Usage(
            "stale forward cache: parameters changed since the forward pass".into(),
        ));
    }
    if output_grad.shape() != cache.output().shape() {
        return Err(Error::Shape {
            layer: net.depth(),
            detail: format!(
                "output gradient shape {:?} does not match output {:?}",
                output_grad.shape(),
                cache.output().shape()
            ),
        });
    }
    let mut grads = want_params.then(|| params.zeros_like());
    let mut records = Vec::new();
    let mut g = output_grad.clone();
    for l in (0..net.depth()).rev() {
        if trace {
            records.push(TraceRecord {
                boundary: l + 1,
                grad: g.clone(),
            });
        }
        let x = &cache.activations[l];
        let y = &cache.activations[l + 1];
        g = backward_layer(&net.layers[l], l, params, x, y, &g, grads.as_mut())?;
    }
    if trace {
        records.push(TraceRecord {
            boundary: 0,
            grad: g.clone(),
        });
    }
    let batch = cache.batch();
    Ok(Backward {
        input_grad: g,
        param_grads: grads,
        trace: trace.then(|| LayerTrace {
            records,
            batch_ids: (0..batch).collect(),
        }),
    })
}

fn batch_shape(batch: usize, inst: &[usize]) -> Vec<usize> {
    let mut s = Vec::with_capacity(inst.len() + 1);
    s.push(batch);
    s.extend_from_slice(inst);
    s
}

fn forward_layer(
    layer: &Layer,
    l: usize,
    params: &ParamSet,
    x: &Tensor,
    out_inst: &[usize],
) -> Result<Tensor> {
    let batch = x.batch();
    let out_shape = batch_shape(batch, out_inst);
    match *layer {
        Layer::Affine {
            in_dim, out_dim, ..
        } => {
            let w = params.weight(l).expect("checked layout");
            let mut y = vec![0.0; batch * out_dim];
            if let Some(b) = params.bias(l) {
                for row in y.chunks_mut(out_dim) {
                    row.copy_from_slice(b.data());
                }
            }
            // y[B,out] += x[B,in] * w^T, w stored [out,in]
            gemm(
                batch,
                in_dim,
                out_dim,
                x.data(),
                (in_dim as isize, 1),
                w.data(),
                (1, in_dim as isize),
                1.0,
                &mut y,
            );
            Ok(Tensor::from_parts(out_shape, y))
        }
        Layer::Conv2d {
            kernel,
            stride,
            padding,
            in_channels,
            out_channels,
        } => {
            let [_, h, w] = chw(x.instance_shape()).expect("checked shapes");
            let geom = ConvGeometry::new(h, w, kernel, stride, padding).expect("checked shapes");
            let wt = params.weight(l).expect("checked layout").data();
            let bias = params.bias(l).expect("checked layout").data();
            let (oh, ow) = (geom.out_h, geom.out_w);
            let mut y = vec![0.0; batch * out_channels * oh * ow];
            for b in 0..batch {
                let xi = x.instance(b);
                let yi = &mut y[b * out_channels * oh * ow..(b + 1) * out_channels * oh * ow];
                for oc in 0..out_channels {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut acc = bias[oc];
                            for ic in 0..in_channels {
                                for ky in 0..kernel {
                                    let Some(iy) = tap(oy, ky, stride, geom.pad_top, h) else {
                                        continue;
                                    };
                                    for kx in 0..kernel {
                                        let Some(ix) = tap(ox, kx, stride, geom.pad_left, w)
                                        else {
                                            continue;
                                        };
                                        acc += wt[((oc * in_channels + ic) * kernel + ky) * kernel
                                            + kx]
                                            * xi[(ic * h + iy) * w + ix];
                                    }
                                }
                            }
                            yi[(oc * oh + oy) * ow + ox] = acc;
                        }
                    }
                }
            }
            Ok(Tensor::from_parts(out_shape, y))
        }
        Layer::Activation(act) => Ok(match act {
            Activation::Identity => x.clone().reshape(out_shape)?,
            _ => Tensor::from_parts(out_shape, x.data().iter().map(|&v| act.apply(v)).collect()),
        }),
        Layer::AvgPool { window } => {
            let [c, h, w] = chw(x.instance_shape()).expect("checked shapes");
            let (oh, ow) = (h / window, w / window);
            let norm = 1.0 / (window * window) as f64;
            let mut y = vec![0.0; batch * c * oh * ow];
            for b in 0..batch {
                let xi = x.instance(b);
                let yi = &mut y[b * c * oh * ow..(b + 1) * c * oh * ow];
                for ch in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut acc = 0.0;
                            for dy in 0..window {
                                for dx in 0..window {
                                    acc += xi[(ch * h + oy * window + dy) * w + ox * window + dx];
                                }
                            }
                            yi[(ch * oh + oy) * ow + ox] = acc * norm;
                        }
                    }
                }
            }
            Ok(Tensor::from_parts(out_shape, y))
        }
    }
}

fn backward_layer(
    layer: &Layer,
    l: usize,
    params: &ParamSet,
    x: &Tensor,
    y: &Tensor,
    gy: &Tensor,
    grads: Option<&mut ParamSet>,
) -> Result<Tensor> {
    let batch = x.batch();
    match *layer {
        Layer::Affine {
            in_dim, out_dim, ..
        } => {
            let w = params.weight(l).expect("checked layout");
            if let Some(grads) = grads {
                let wkey = ParamKey {
                    layer: l,
                    role: Role::Weight,
                };
                // dw[out,in] = gy^T[out,B] * x[B,in]
                let dw = grads.get_mut(wkey).expect("aligned grads");
                gemm(
                    out_dim,
                    batch,
                    in_dim,
                    gy.data(),
                    (1, out_dim as isize),
                    x.data(),
                    (in_dim as isize, 1),
                    0.0,
                    dw.data_mut(),
                );
                let bkey = ParamKey {
                    layer: l,
                    role: Role::Bias,
                };
                if let Some(db) = grads.get_mut(bkey) {
                    let db = db.data_mut();
                    db.iter_mut().for_each(|v| *v = 0.0);
                    for row in gy.data().chunks(out_dim) {
                        for (d, g) in db.iter_mut().zip(row) {
                            *d += g;
                        }
                    }
                }
            }
            // dx[B,in] = gy[B,out] * w[out,in]
            let mut dx = vec![0.0; batch * in_dim];
            gemm(
                batch,
                out_dim,
                in_dim,
                gy.data(),
                (out_dim as isize, 1),
                w.data(),
                (in_dim as isize, 1),
                0.0,
                &mut dx,
            );
            Ok(Tensor::from_parts(x.shape().to_vec(), dx))
        }
        Layer::Conv2d {
            kernel,
            stride,
            padding,
            in_channels,
            out_channels,
        } => {
            let [_, h, w] = chw(x.instance_shape()).expect("checked shapes");
            let geom = ConvGeometry::new(h, w, kernel, stride, padding).expect("checked shapes");
            let (oh, ow) = (geom.out_h, geom.out_w);
            let wt = params.weight(l).expect("checked layout").data();
            let mut dx = vec![0.0; x.len()];
            let mut dw = vec![0.0; wt.len()];
            let mut db = vec![0.0; out_channels];
            let want = grads.is_some();
            for b in 0..batch {
                let xi = x.instance(b);
                let gi = gy.instance(b);
                let dxi = &mut dx[b * in_channels * h * w..(b + 1) * in_channels * h * w];
                for oc in 0..out_channels {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let g = gi[(oc * oh + oy) * ow + ox];
                            db[oc] += g;
                            for ic in 0..in_channels {
                                for ky in 0..kernel {
                                    let Some(iy) = tap(oy, ky, stride, geom.pad_top, h) else {
                                        continue;
                                    };
                                    for kx in 0..kernel {
                                        let Some(ix) = tap(ox, kx, stride, geom.pad_left, w)
                                        else {
                                            continue;
                                        };
                                        let wi =
                                            ((oc * in_channels + ic) * kernel + ky) * kernel + kx;
                                        let xo = (ic * h + iy) * w + ix;
                                        if want {
                                            dw[wi] += g * xi[xo];
                                        }
                                        dxi[xo] += g * wt[wi];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            if let Some(grads) = grads {
                grads
                    .get_mut(ParamKey {
                        layer: l,
                        role: Role::Weight,
                    })
                    .expect("aligned grads")
                    .data_mut()
                    .copy_from_slice(&dw);
                grads
                    .get_mut(ParamKey {
                        layer: l,
                        role: Role::Bias,
                    })
                    .expect("aligned grads")
                    .data_mut()
                    .copy_from_slice(&db);
            }
            Ok(Tensor::from_parts(x.shape().to_vec(), dx))
        }
        Layer::Activation(act) => {
            let data = match act {
                Activation::Identity => gy.data().to_vec(),
                _ => x
                    .data()
                    .iter()
                    .zip(y.data())
                    .zip(gy.data())
                    .map(|((&xv, &yv), &g)| g * act.derivative(xv, yv))
                    .collect(),
            };
            Ok(Tensor::from_parts(x.shape().to_vec(), data))
        }
        Layer::AvgPool { window } => {
            let [c, h, w] = chw(x.instance_shape()).expect("checked shapes");
            let (oh, ow) = (h / window, w / window);
            let norm = 1.0 / (window * window) as f64;
            let mut dx = vec![0.0; x.len()];
            for b in 0..batch {
                let gi = gy.instance(b);
                let dxi = &mut dx[b * c * h * w..(b + 1) * c * h * w];
                for ch in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let g = gi[(ch * oh + oy) * ow + ox] * norm;
                            for dy in 0..window {
                                for dxx in 0..window {
                                    dxi[(ch * h + oy * window + dy) * w + ox * window + dxx] += g;
                                }
                            }
                        }
                    }
                }
            }
            Ok(Tensor::from_parts(x.shape().to_vec(), dx))
        }
    }
}

#[inline]
fn tap(o: usize, k: usize, stride: usize, pad: usize, extent: usize) -> Option<usize> {
    let pos = (o * stride + k).checked_sub(pad)?;
    (pos < extent).then_some(pos)
}

/// `c[m,n] = x[m,k] * y[k,n] + beta * c`, with c row-major contiguous.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    x: &[f64],
    x_strides: (isize, isize),
    y: &[f64],
    y_strides: (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    assert!(x.len() >= m * k && y.len() >= k * n && c.len() >= m * n);
    // SAFETY: the slices cover the strided extents asserted above, and `c`
    // does not alias either operand.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            x.as_ptr(),
            x_strides.0,
            x_strides.1,
            y.as_ptr(),
            y_strides.0,
            y_strides.1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::spec::Layer;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single_affine(w: Vec<f64>, in_dim: usize, out_dim: usize) -> (NetworkSpec, ParamSet) {
        let net = NetworkSpec::new(
            vec![in_dim],
            vec![Layer::affine(in_dim, out_dim), Layer::identity()],
        )
        .unwrap();
        let mut p = ParamSet::zeros_for(&net);
        p.weight_mut_for_test(0).copy_from_slice(&w);
        (net, p)
    }

    impl ParamSet {
        fn weight_mut_for_test(&mut self, layer: usize) -> &mut [f64] {
            self.get_mut(ParamKey {
                layer,
                role: Role::Weight,
            })
            .unwrap()
            .data_mut()
        }
    }

    #[test]
    fn identity_weight_passes_input_through() {
        let (net, p) = single_affine(vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], 3, 3);
        let v = Tensor::new(vec![1, 3], vec![0.25, -1.5, 3.0]).unwrap();
        let (out, _) = forward_network(&net, &p, &v, false).unwrap();
        assert_eq!(out, v);
    }

    #[test]
    fn affine_sum_by_hand() {
        let (net, p) = single_affine(vec![1.0, 1.0], 2, 1);
        let v = Tensor::new(vec![1, 2], vec![0.3, 0.7]).unwrap();
        let (out, _) = forward_network(&net, &p, &v, false).unwrap();
        assert!((out.data()[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn scalar_chain_rule() {
        let w = 1.7;
        let g = -0.4;
        let x = 0.9;
        let (net, p) = single_affine(vec![w], 1, 1);
        let input = Tensor::new(vec![1, 1], vec![x]).unwrap();
        let (_, cache) = forward_network(&net, &p, &input, true).unwrap();
        let back = backward_network(&net, &p, &cache.unwrap(), &Tensor::full(&[1, 1], g), false)
            .unwrap();
        assert!((back.input_grad.data()[0] - w * g).abs() < 1e-15);
        let grads = back.param_grads.unwrap();
        assert!((grads.weight(0).unwrap().data()[0] - g * x).abs() < 1e-15);
        assert!((grads.bias(0).unwrap().data()[0] - g).abs() < 1e-15);
    }

    #[test]
    fn zero_output_gradient_gives_zero_gradients() {
        let net = NetworkSpec::new(
            vec![1, 6, 6],
            vec![
                Layer::conv2d(1, 2, 3, 1),
                Layer::tanh(),
                Layer::AvgPool { window: 2 },
                Layer::affine(8, 3),
                Layer::leaky_relu(),
                Layer::affine(3, 1),
            ],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = ParamSet::init(&net, &mut rng);
        let x = Tensor::new(vec![2, 1, 6, 6], (0..72).map(|i| (i as f64 * 0.37).sin()).collect())
            .unwrap();
        let (out, cache) = forward_network(&net, &p, &x, true).unwrap();
        let back = backward_network(
            &net,
            &p,
            &cache.unwrap(),
            &Tensor::zeros(out.shape()),
            true,
        )
        .unwrap();
        assert!(back.input_grad.data().iter().all(|&v| v == 0.0));
        assert!(back.param_grads.unwrap().all_zero());
        let trace = back.trace.unwrap();
        assert_eq!(trace.records.len(), net.depth() + 1);
        assert_eq!(trace.records[0].boundary, net.depth());
        assert_eq!(trace.records.last().unwrap().boundary, 0);
    }

    #[test]
    fn stale_cache_is_a_usage_error() {
        let (net, mut p) = single_affine(vec![2.0], 1, 1);
        let input = Tensor::new(vec![1, 1], vec![1.0]).unwrap();
        let (_, cache) = forward_network(&net, &p, &input, true).unwrap();
        p.weight_mut_for_test(0)[0] = 3.0;
        let err = backward_network(&net, &p, &cache.unwrap(), &Tensor::full(&[1, 1], 1.0), false)
            .unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
    }

    #[test]
    fn overflow_is_reported_with_layer() {
        let (net, mut p) = single_affine(vec![1e308], 1, 1);
        p.weight_mut_for_test(0)[0] = 1e308;
        let input = Tensor::new(vec![1, 1], vec![10.0]).unwrap();
        let err = forward_network(&net, &p, &input, false).unwrap_err();
        assert_eq!(err, Error::Overflow { layer: 0 });
    }

    #[test]
    fn input_shape_mismatch() {
        let (net, p) = single_affine(vec![1.0, 1.0], 2, 1);
        let input = Tensor::new(vec![1, 3], vec![1.0; 3]).unwrap();
        assert!(matches!(
            forward_network(&net, &p, &input, false),
            Err(Error::Shape { layer: 0, .. })
        ));
    }
}
