//! Dense kernels for the op set. All strided windows sample at phase
//! stride-1 on both axes, i.e. output u reads inputs around stride*u +
//! (stride-1); see `pad::out_len`. Padding is zero fill; max pooling skips
//! padded positions, average pooling divides by the full window size.

use super::graph::{ConvSpec, PoolSpec};
use super::pad::out_len;
use super::{Scalar, Tensor, TensorError};

pub(crate) fn shape_err(context: &str, expected: Vec<usize>, got: Vec<usize>) -> TensorError {
    TensorError::Shape { context: context.to_string(), expected, got }
}

/// a[m x k] times b[k x n] with explicit element strides per operand,
/// written into row-major c[m x n] as c = alpha*ab + beta*c.
#[allow(clippy::too_many_arguments)]
fn gemm_strided<S: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    alpha: S,
    a: &[S],
    a_strides: (isize, isize),
    b: &[S],
    b_strides: (isize, isize),
    beta: S,
    c: &mut [S],
) {
    S::gemm_strided(m, k, n, alpha, a, a_strides.0, a_strides.1, b, b_strides.0, b_strides.1, beta, c);
}

impl ConvSpec {
    pub fn out_shape(&self, x: [usize; 4]) -> [usize; 4] {
        let to = out_len(x[2], self.kernel.0, self.dilation.0, self.stride.0, self.pad.t_before, self.pad.t_after);
        let fo = out_len(x[3], self.kernel.1, self.dilation.1, self.stride.1, self.pad.f_before, self.pad.f_after);
        [x[0], self.out_ch, to, fo]
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == (1, 1)
            && self.stride == (1, 1)
            && self.dilation == (1, 1)
            && self.pad.t_before == 0
            && self.pad.t_after == 0
            && self.pad.f_before == 0
            && self.pad.f_after == 0
    }
}

impl PoolSpec {
    pub fn out_shape(&self, x: [usize; 4]) -> [usize; 4] {
        let to = out_len(x[2], self.kernel.0, 1, self.stride.0, self.pad.t_before, self.pad.t_after);
        let fo = out_len(x[3], self.kernel.1, 1, self.stride.1, self.pad.f_before, self.pad.f_after);
        [x[0], x[1], to, fo]
    }
}

fn im2col<S: Scalar>(x: &Tensor<S>, spec: &ConvSpec, to_len: usize, fo_len: usize) -> Vec<S> {
    let [bs, cin, t_len, f_len] = x.shape();
    let (kt, kf) = spec.kernel;
    let (st, sf) = spec.stride;
    let (dt, df) = spec.dilation;
    let cols = bs * to_len * fo_len;
    let mut col = vec![S::zero(); cin * kt * kf * cols];
    let xs = x.as_slice();
    for ci in 0..cin {
        for i in 0..kt {
            for j in 0..kf {
                let row = ((ci * kt) + i) * kf + j;
                let out_row = &mut col[row * cols..(row + 1) * cols];
                for b in 0..bs {
                    let x_base = (b * cin + ci) * t_len * f_len;
                    for to in 0..to_len {
                        let t_in = (to * st + st - 1 + i * dt) as isize - spec.pad.t_before as isize;
                        let n_base = (b * to_len + to) * fo_len;
                        if t_in < 0 || t_in >= t_len as isize {
                            continue;
                        }
                        let x_t = x_base + t_in as usize * f_len;
                        for fo in 0..fo_len {
                            let f_in = (fo * sf + sf - 1 + j * df) as isize - spec.pad.f_before as isize;
                            if f_in < 0 || f_in >= f_len as isize {
                                continue;
                            }
                            out_row[n_base + fo] = xs[x_t + f_in as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

fn col2im_add<S: Scalar>(colg: &[S], spec: &ConvSpec, gx: &mut Tensor<S>, to_len: usize, fo_len: usize) {
    let [bs, cin, t_len, f_len] = gx.shape();
    let (kt, kf) = spec.kernel;
    let (st, sf) = spec.stride;
    let (dt, df) = spec.dilation;
    let cols = bs * to_len * fo_len;
    let gs = gx.as_mut_slice();
    for ci in 0..cin {
        for i in 0..kt {
            for j in 0..kf {
                let row = ((ci * kt) + i) * kf + j;
                let in_row = &colg[row * cols..(row + 1) * cols];
                for b in 0..bs {
                    let x_base = (b * cin + ci) * t_len * f_len;
                    for to in 0..to_len {
                        let t_in = (to * st + st - 1 + i * dt) as isize - spec.pad.t_before as isize;
                        if t_in < 0 || t_in >= t_len as isize {
                            continue;
                        }
                        let n_base = (b * to_len + to) * fo_len;
                        let x_t = x_base + t_in as usize * f_len;
                        for fo in 0..fo_len {
                            let f_in = (fo * sf + sf - 1 + j * df) as isize - spec.pad.f_before as isize;
                            if f_in < 0 || f_in >= f_len as isize {
                                continue;
                            }
                            gs[x_t + f_in as usize] = gs[x_t + f_in as usize] + in_row[n_base + fo];
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>, spec: &ConvSpec) -> Result<Tensor<S>, TensorError> {
    let xs = x.shape();
    if xs[1] != spec.in_ch {
        return Err(shape_err("conv2d input channels", vec![spec.in_ch], vec![xs[1]]));
    }
    let wexp = [spec.out_ch, spec.in_ch, spec.kernel.0, spec.kernel.1];
    if w.shape() != wexp {
        return Err(shape_err("conv2d weight", wexp.to_vec(), w.shape().to_vec()));
    }
    let out_shape = spec.out_shape(xs);
    let [bs, cout, to_len, fo_len] = out_shape;
    let mut y = Tensor::zeros(out_shape);
    if spec.is_pointwise() {
        // One gemm per batch item over the contiguous (C, T*F) view.
        let tf = xs[2] * xs[3];
        for b in 0..bs {
            let xin = &x.as_slice()[b * spec.in_ch * tf..(b + 1) * spec.in_ch * tf];
            let yout = &mut y.as_mut_slice()[b * cout * tf..(b + 1) * cout * tf];
            S::gemm(cout, spec.in_ch, tf, S::one(), w.as_slice(), xin, S::zero(), yout);
        }
        return Ok(y);
    }
    let k = spec.in_ch * spec.kernel.0 * spec.kernel.1;
    let cols = bs * to_len * fo_len;
    if cols == 0 {
        return Ok(y);
    }
    let col = im2col(x, spec, to_len, fo_len);
    let mut y_mat = vec![S::zero(); cout * cols];
    S::gemm(cout, k, cols, S::one(), w.as_slice(), &col, S::zero(), &mut y_mat);
    let tf_out = to_len * fo_len;
    for co in 0..cout {
        for b in 0..bs {
            let src = &y_mat[co * cols + b * tf_out..co * cols + (b + 1) * tf_out];
            let dst_start = (b * cout + co) * tf_out;
            y.as_mut_slice()[dst_start..dst_start + tf_out].copy_from_slice(src);
        }
    }
    Ok(y)
}

pub fn conv2d_backward<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    spec: &ConvSpec,
    gy: &Tensor<S>,
    gw: &mut Tensor<S>,
) -> Result<Tensor<S>, TensorError> {
    let xs = x.shape();
    let [bs, cout, to_len, fo_len] = gy.shape();
    let mut gx = Tensor::zeros(xs);
    if spec.is_pointwise() {
        let tf = xs[2] * xs[3];
        for b in 0..bs {
            let xin = &x.as_slice()[b * spec.in_ch * tf..(b + 1) * spec.in_ch * tf];
            let gyb = &gy.as_slice()[b * cout * tf..(b + 1) * cout * tf];
            // gw += gy_b * x_bT ; gx_b = wT * gy_b.
            gemm_strided(
                cout, tf, spec.in_ch, S::one(),
                gyb, (tf as isize, 1),
                xin, (1, tf as isize),
                S::one(),
                gw.as_mut_slice(),
            );
            let gxb = &mut gx.as_mut_slice()[b * spec.in_ch * tf..(b + 1) * spec.in_ch * tf];
            gemm_strided(
                spec.in_ch, cout, tf, S::one(),
                w.as_slice(), (1, spec.in_ch as isize),
                gyb, (tf as isize, 1),
                S::zero(),
                gxb,
            );
        }
        return Ok(gx);
    }
    let k = spec.in_ch * spec.kernel.0 * spec.kernel.1;
    let cols = bs * to_len * fo_len;
    if cols == 0 {
        return Ok(gx);
    }
    let col = im2col(x, spec, to_len, fo_len);
    let tf_out = to_len * fo_len;
    let mut gy_mat = vec![S::zero(); cout * cols];
    for co in 0..cout {
        for b in 0..bs {
            let src_start = (b * cout + co) * tf_out;
            let dst = &mut gy_mat[co * cols + b * tf_out..co * cols + (b + 1) * tf_out];
            dst.copy_from_slice(&gy.as_slice()[src_start..src_start + tf_out]);
        }
    }
    // gw[Cout x K] += gy_mat[Cout x N] colT[N x K].
    gemm_strided(
        cout, cols, k, S::one(),
        &gy_mat, (cols as isize, 1),
        &col, (1, cols as isize),
        S::one(),
        gw.as_mut_slice(),
    );
    // colg[K x N] = wT[K x Cout] gy_mat.
    let mut colg = vec![S::zero(); k * cols];
    gemm_strided(
        k, cout, cols, S::one(),
        w.as_slice(), (1, k as isize),
        &gy_mat, (cols as isize, 1),
        S::zero(),
        &mut colg,
    );
    col2im_add(&colg, spec, &mut gx, to_len, fo_len);
    Ok(gx)
}

/// Depthwise conv: weight laid out (C, 1, kt, kf).
pub fn depthwise_forward<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>, spec: &ConvSpec) -> Result<Tensor<S>, TensorError> {
    let xs = x.shape();
    if xs[1] != spec.in_ch || spec.out_ch != spec.in_ch {
        return Err(shape_err("depthwise channels", vec![spec.in_ch, spec.in_ch], vec![xs[1], spec.out_ch]));
    }
    let wexp = [spec.in_ch, 1, spec.kernel.0, spec.kernel.1];
    if w.shape() != wexp {
        return Err(shape_err("depthwise weight", wexp.to_vec(), w.shape().to_vec()));
    }
    let out_shape = spec.out_shape(xs);
    let [bs, ch, to_len, fo_len] = out_shape;
    let (kt, kf) = spec.kernel;
    let (st, sf) = spec.stride;
    let (dt, df) = spec.dilation;
    let (t_len, f_len) = (xs[2], xs[3]);
    let mut y = Tensor::zeros(out_shape);
    let xsl = x.as_slice();
    let wsl = w.as_slice();
    let ysl = y.as_mut_slice();
    for b in 0..bs {
        for c in 0..ch {
            let x_base = (b * ch + c) * t_len * f_len;
            let w_base = c * kt * kf;
            let y_base = (b * ch + c) * to_len * fo_len;
            for to in 0..to_len {
                for fo in 0..fo_len {
                    let mut acc = S::zero();
                    for i in 0..kt {
                        let t_in = (to * st + st - 1 + i * dt) as isize - spec.pad.t_before as isize;
                        if t_in < 0 || t_in >= t_len as isize {
                            continue;
                        }
                        for j in 0..kf {
                            let f_in = (fo * sf + sf - 1 + j * df) as isize - spec.pad.f_before as isize;
                            if f_in < 0 || f_in >= f_len as isize {
                                continue;
                            }
                            acc = acc
                                + wsl[w_base + i * kf + j]
                                    * xsl[x_base + t_in as usize * f_len + f_in as usize];
                        }
                    }
                    ysl[y_base + to * fo_len + fo] = acc;
                }
            }
        }
    }
    Ok(y)
}

pub fn depthwise_backward<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    spec: &ConvSpec,
    gy: &Tensor<S>,
    gw: &mut Tensor<S>,
) -> Result<Tensor<S>, TensorError> {
    let xs = x.shape();
    let [bs, ch, to_len, fo_len] = gy.shape();
    let (kt, kf) = spec.kernel;
    let (st, sf) = spec.stride;
    let (dt, df) = spec.dilation;
    let (t_len, f_len) = (xs[2], xs[3]);
    let mut gx = Tensor::zeros(xs);
    let xsl = x.as_slice();
    let wsl = w.as_slice();
    let gysl = gy.as_slice();
    let gxsl = gx.as_mut_slice();
    let gwsl = gw.as_mut_slice();
    for b in 0..bs {
        for c in 0..ch {
            let x_base = (b * ch + c) * t_len * f_len;
            let w_base = c * kt * kf;
            let y_base = (b * ch + c) * to_len * fo_len;
            for to in 0..to_len {
                for fo in 0..fo_len {
                    let g = gysl[y_base + to * fo_len + fo];
                    if g == S::zero() {
                        continue;
                    }
                    for i in 0..kt {
                        let t_in = (to * st + st - 1 + i * dt) as isize - spec.pad.t_before as isize;
                        if t_in < 0 || t_in >= t_len as isize {
                            continue;
                        }
                        for j in 0..kf {
                            let f_in = (fo * sf + sf - 1 + j * df) as isize - spec.pad.f_before as isize;
                            if f_in < 0 || f_in >= f_len as isize {
                                continue;
                            }
                            let xi = x_base + t_in as usize * f_len + f_in as usize;
                            gwsl[w_base + i * kf + j] = gwsl[w_base + i * kf + j] + g * xsl[xi];
                            gxsl[xi] = gxsl[xi] + g * wsl[w_base + i * kf + j];
                        }
                    }
                }
            }
        }
    }
    Ok(gx)
}

pub fn max_pool_forward<S: Scalar>(x: &Tensor<S>, spec: &PoolSpec) -> (Tensor<S>, Vec<u32>) {
    let xs = x.shape();
    let out_shape = spec.out_shape(xs);
    let [bs, ch, to_len, fo_len] = out_shape;
    let (kt, kf) = spec.kernel;
    let (st, sf) = spec.stride;
    let (t_len, f_len) = (xs[2], xs[3]);
    let mut y = Tensor::zeros(out_shape);
    let mut arg = vec![u32::MAX; y.len()];
    let xsl = x.as_slice();
    let ysl = y.as_mut_slice();
    for b in 0..bs {
        for c in 0..ch {
            let x_base = (b * ch + c) * t_len * f_len;
            let y_base = (b * ch + c) * to_len * fo_len;
            for to in 0..to_len {
                for fo in 0..fo_len {
                    let mut best = S::neg_infinity();
                    let mut best_idx = u32::MAX;
                    for i in 0..kt {
                        let t_in = (to * st + st - 1 + i) as isize - spec.pad.t_before as isize;
                        if t_in < 0 || t_in >= t_len as isize {
                            continue;
                        }
                        for j in 0..kf {
                            let f_in = (fo * sf + sf - 1 + j) as isize - spec.pad.f_before as isize;
                            if f_in < 0 || f_in >= f_len as isize {
                                continue;
                            }
                            let xi = x_base + t_in as usize * f_len + f_in as usize;
                            if xsl[xi] > best {
                                best = xsl[xi];
                                best_idx = xi as u32;
                            }
                        }
                    }
                    let yi = y_base + to * fo_len + fo;
                    // Padding is skipped; a fully padded window yields zero.
                    ysl[yi] = if best_idx == u32::MAX { S::zero() } else { best };
                    arg[yi] = best_idx;
                }
            }
        }
    }
    (y, arg)
}

pub fn max_pool_backward<S: Scalar>(in_shape: [usize; 4], arg: &[u32], gy: &Tensor<S>) -> Tensor<S> {
    let mut gx = Tensor::zeros(in_shape);
    let gxsl = gx.as_mut_slice();
    for (gi, &ai) in gy.as_slice().iter().zip(arg.iter()) {
        if ai != u32::MAX {
            gxsl[ai as usize] = gxsl[ai as usize] + *gi;
        }
    }
    gx
}

pub fn avg_pool_forward<S: Scalar>(x: &Tensor<S>, spec: &PoolSpec) -> Tensor<S> {
    let xs = x.shape();
    let out_shape = spec.out_shape(xs);
    let [bs, ch, to_len, fo_len] = out_shape;
    let (kt, kf) = spec.kernel;
    let (st, sf) = spec.stride;
    let (t_len, f_len) = (xs[2], xs[3]);
    let inv = S::of(1.0 / (kt * kf) as f64);
    let mut y = Tensor::zeros(out_shape);
    let xsl = x.as_slice();
    let ysl = y.as_mut_slice();
    for b in 0..bs {
        for c in 0..ch {
            let x_base = (b * ch + c) * t_len * f_len;
            let y_base = (b * ch + c) * to_len * fo_len;
            for to in 0..to_len {
                for fo in 0..fo_len {
                    let mut acc = S::zero();
                    for i in 0..kt {
                        let t_in = (to * st + st - 1 + i) as isize - spec.pad.t_before as isize;
                        if t_in < 0 || t_in >= t_len as isize {
                            continue;
                        }
                        for j in 0..kf {
                            let f_in = (fo * sf + sf - 1 + j) as isize - spec.pad.f_before as isize;
                            if f_in < 0 || f_in >= f_len as isize {
                                continue;
                            }
                            acc = acc + xsl[x_base + t_in as usize * f_len + f_in as usize];
                        }
                    }
                    // The divisor counts padding, matching the averaging
                    // convention assumed by the latency-free freq axis.
                    ysl[y_base + to * fo_len + fo] = acc * inv;
                }
            }
        }
    }
    y
}

pub fn avg_pool_backward<S: Scalar>(in_shape: [usize; 4], spec: &PoolSpec, gy: &Tensor<S>) -> Tensor<S> {
    let [bs, ch, to_len, fo_len] = gy.shape();
    let (kt, kf) = spec.kernel;
    let (st, sf) = spec.stride;
    let (t_len, f_len) = (in_shape[2], in_shape[3]);
    let inv = S::of(1.0 / (kt * kf) as f64);
    let mut gx = Tensor::zeros(in_shape);
    let gysl = gy.as_slice();
    let gxsl = gx.as_mut_slice();
    for b in 0..bs {
        for c in 0..ch {
            let x_base = (b * ch + c) * t_len * f_len;
            let y_base = (b * ch + c) * to_len * fo_len;
            for to in 0..to_len {
                for fo in 0..fo_len {
                    let g = gysl[y_base + to * fo_len + fo] * inv;
                    for i in 0..kt {
                        let t_in = (to * st + st - 1 + i) as isize - spec.pad.t_before as isize;
                        if t_in < 0 || t_in >= t_len as isize {
                            continue;
                        }
                        for j in 0..kf {
                            let f_in = (fo * sf + sf - 1 + j) as isize - spec.pad.f_before as isize;
                            if f_in < 0 || f_in >= f_len as isize {
                                continue;
                            }
                            let xi = x_base + t_in as usize * f_len + f_in as usize;
                            gxsl[xi] = gxsl[xi] + g;
                        }
                    }
                }
            }
        }
    }
    gx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::pad::same_padding;
    use rand::prelude::*;
    use rand_chacha::ChaCha20Rng;

    fn randn(shape: [usize; 4], rng: &mut ChaCha20Rng) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        Tensor::from_vec(shape, data)
    }

    #[test]
    fn pointwise_identity_kernel() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let x = randn([2, 3, 5, 4], &mut rng);
        let mut w = Tensor::zeros([3, 3, 1, 1]);
        for c in 0..3 {
            w.set(c, c, 0, 0, 1.0);
        }
        let spec = ConvSpec {
            in_ch: 3,
            out_ch: 3,
            kernel: (1, 1),
            stride: (1, 1),
            dilation: (1, 1),
            pad: crate::tensor::Pad::none(),
        };
        let y = conv2d_forward(&x, &w, &spec).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn avg_pool_of_constant_shrinks_at_borders() {
        let x = Tensor::full([1, 1, 6, 6], 1.0f64);
        let spec = PoolSpec {
            kernel: (3, 3),
            stride: (1, 1),
            pad: same_padding((3, 3), (1, 1), (1, 1), false),
        };
        let y = avg_pool_forward(&x, &spec);
        assert_eq!(y.shape(), [1, 1, 6, 6]);
        // Interior windows see all nine inputs, corners only four.
        assert!((y.at(0, 0, 3, 3) - 1.0).abs() < 1e-12);
        assert!((y.at(0, 0, 0, 0) - 4.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn strided_pool_samples_late_phase() {
        // Input 0..7 on the time axis; a 1x1 kernel stride-2 max pool must
        // return the odd samples.
        let x = Tensor::from_vec([1, 1, 8, 1], (0..8).map(|v| v as f64).collect());
        let spec = PoolSpec { kernel: (1, 1), stride: (2, 1), pad: crate::tensor::Pad { t_before: 0, t_after: 1, f_before: 0, f_after: 0 } };
        let (y, _) = max_pool_forward(&x, &spec);
        assert_eq!(y.shape(), [1, 1, 4, 1]);
        assert_eq!(y.as_slice(), &[1.0, 3.0, 5.0, 7.0]);
    }

    #[test]
    fn conv_matches_direct_computation() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let x = randn([2, 2, 6, 5], &mut rng);
        let w = randn([3, 2, 3, 3], &mut rng);
        let spec = ConvSpec {
            in_ch: 2,
            out_ch: 3,
            kernel: (3, 3),
            stride: (1, 1),
            dilation: (1, 1),
            pad: same_padding((3, 3), (1, 1), (1, 1), true),
        };
        let y = conv2d_forward(&x, &w, &spec).unwrap();
        assert_eq!(y.shape(), [2, 3, 6, 5]);
        // Direct evaluation at one position.
        let (b, co, to, fo) = (1, 2, 3, 2);
        let mut acc = 0.0;
        for ci in 0..2 {
            for i in 0..3 {
                for j in 0..3 {
                    let t = to as isize + i as isize - 2;
                    let f = fo as isize + j as isize - 1;
                    if t < 0 || t >= 6 || f < 0 || f >= 5 {
                        continue;
                    }
                    acc += w.at(co, ci, i, j) * x.at(b, ci, t as usize, f as usize);
                }
            }
        }
        assert!((y.at(b, co, to, fo) - acc).abs() < 1e-12);
    }
}
