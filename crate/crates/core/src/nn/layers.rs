//! Convolution, transposed convolution, dense and ReLU kernels with their
//! backward passes.
//!
//! Convolutions lower to GEMM through `im2col`/`col2im` over the whole
//! batch. Filters are `[out, in, k, k]` for [`conv2d`] and `[in, out, k, k]`
//! for [`deconv2d`], so one filter tensor used in both is an adjoint pair.

use super::tensor::{batch_to_channel_major, channel_to_batch_major, gemm, Tensor};
use crate::error::{Error, Result};

/// Output extent of a strided cross-correlation.
pub fn conv_out(input: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    let span = (input + 2 * padding).checked_sub(kernel);
    match span {
        Some(s) if stride > 0 && s % stride == 0 => Ok(s / stride + 1),
        _ => Err(Error::Shape(format!(
            "conv of extent {input} with kernel {kernel}, stride {stride}, padding {padding} is not integral"
        ))),
    }
}

/// Output extent of a transposed convolution.
pub fn deconv_out(input: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    let full = input.saturating_sub(1) * stride + kernel;
    match full.checked_sub(2 * padding) {
        Some(o) if o > 0 && input > 0 && stride > 0 => Ok(o),
        _ => Err(Error::Shape(format!(
            "deconv of extent {input} with kernel {kernel}, stride {stride}, padding {padding} is empty"
        ))),
    }
}

#[derive(Clone, Copy, Debug)]
struct Window {
    b: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    s: usize,
    p: usize,
    ho: usize,
    wo: usize,
}

impl Window {
    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.b * self.ho * self.wo
    }

    /// Source pixel for kernel tap `ki` at output index `o`, if inside the image.
    fn src(o: usize, ki: usize, s: usize, p: usize, extent: usize) -> Option<usize> {
        (o * s + ki).checked_sub(p).filter(|&i| i < extent)
    }
}

fn im2col(x: &[f64], g: Window) -> Vec<f64> {
    let ncols = g.cols();
    let mut cols = vec![0.0; g.rows() * ncols];
    for c in 0..g.c {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                for b in 0..g.b {
                    let plane = &x[(b * g.c + c) * g.h * g.w..][..g.h * g.w];
                    for oh in 0..g.ho {
                        let Some(ih) = Window::src(oh, ki, g.s, g.p, g.h) else { continue };
                        let base = (b * g.ho + oh) * g.wo;
                        for ow in 0..g.wo {
                            if let Some(iw) = Window::src(ow, kj, g.s, g.p, g.w) {
                                dst[base + ow] = plane[ih * g.w + iw];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], g: Window) -> Vec<f64> {
    let ncols = g.cols();
    let mut x = vec![0.0; g.b * g.c * g.h * g.w];
    for c in 0..g.c {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let src = &cols[row * ncols..(row + 1) * ncols];
                for b in 0..g.b {
                    let plane = &mut x[(b * g.c + c) * g.h * g.w..][..g.h * g.w];
                    for oh in 0..g.ho {
                        let Some(ih) = Window::src(oh, ki, g.s, g.p, g.h) else { continue };
                        let base = (b * g.ho + oh) * g.wo;
                        for ow in 0..g.wo {
                            if let Some(iw) = Window::src(ow, kj, g.s, g.p, g.w) {
                                plane[ih * g.w + iw] += src[base + ow];
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

fn filter_dims(w: &Tensor) -> Result<[usize; 3]> {
    match w.shape() {
        &[a, b, k, k2] if k == k2 => Ok([a, b, k]),
        s => Err(Error::Shape(format!("filters must be [a, b, k, k], got {s:?}"))),
    }
}

fn check_bias(bias: Option<&Tensor>, channels: usize) -> Result<()> {
    match bias {
        Some(b) if b.len() != channels => {
            Err(Error::Shape(format!("bias has {} values for {channels} channels", b.len())))
        }
        _ => Ok(()),
    }
}

fn add_channel_bias(y: &mut [f64], bias: Option<&Tensor>, b: usize, c: usize, hw: usize) {
    let Some(bias) = bias else { return };
    for bi in 0..b {
        for (ci, &bv) in bias.data().iter().enumerate() {
            for v in &mut y[(bi * c + ci) * hw..][..hw] {
                *v += bv;
            }
        }
    }
}

fn channel_sums(dy: &[f64], b: usize, c: usize, hw: usize) -> Tensor {
    let mut db = vec![0.0; c];
    for bi in 0..b {
        for (ci, acc) in db.iter_mut().enumerate() {
            *acc += dy[(bi * c + ci) * hw..][..hw].iter().sum::<f64>();
        }
    }
    Tensor::from_vec(&[c], db).expect("bias length")
}

/// Gradients of a layer with weights and bias.
#[derive(Clone, Debug)]
pub struct LayerGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Cross-correlation of `x: [B, Ci, H, W]` with `w: [Co, Ci, k, k]`.
pub fn conv2d(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, stride: usize, padding: usize) -> Result<Tensor> {
    let [b, ci, h, wd] = x.dims4()?;
    let [co, wci, k] = filter_dims(w)?;
    if wci != ci {
        return Err(Error::Shape(format!("conv input has {ci} channels, filters expect {wci}")));
    }
    check_bias(bias, co)?;
    let g = Window { b, c: ci, h, w: wd, k, s: stride, p: padding, ho: conv_out(h, k, stride, padding)?, wo: conv_out(wd, k, stride, padding)? };
    let cols = im2col(x.data(), g);
    let mut y = vec![0.0; co * g.cols()];
    gemm(co, g.rows(), g.cols(), w.data(), false, &cols, false, &mut y, 0.0);
    let hw = g.ho * g.wo;
    let mut y = channel_to_batch_major(&y, b, co, hw);
    add_channel_bias(&mut y, bias, b, co, hw);
    Tensor::from_vec(&[b, co, g.ho, g.wo], y)
}

pub fn conv2d_backward(x: &Tensor, w: &Tensor, dy: &Tensor, stride: usize, padding: usize) -> Result<LayerGrads> {
    let [b, ci, h, wd] = x.dims4()?;
    let [co, _, k] = filter_dims(w)?;
    let [_, dco, ho, wo] = dy.dims4()?;
    if dco != co {
        return Err(Error::Shape(format!("gradient has {dco} channels, filters produce {co}")));
    }
    let g = Window { b, c: ci, h, w: wd, k, s: stride, p: padding, ho, wo };
    let cols = im2col(x.data(), g);
    let dy_cm = batch_to_channel_major(dy.data(), b, co, ho * wo);
    let mut dw = vec![0.0; w.len()];
    gemm(co, g.cols(), g.rows(), &dy_cm, false, &cols, true, &mut dw, 0.0);
    let mut dcols = vec![0.0; cols.len()];
    gemm(g.rows(), co, g.cols(), w.data(), true, &dy_cm, false, &mut dcols, 0.0);
    Ok(LayerGrads {
        input: Tensor::from_vec(x.shape(), col2im(&dcols, g))?,
        weight: Tensor::from_vec(w.shape(), dw)?,
        bias: channel_sums(dy.data(), b, co, ho * wo),
    })
}

/// Transposed convolution of `x: [B, Ci, H, W]` with `w: [Ci, Co, k, k]`.
pub fn deconv2d(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, stride: usize, padding: usize) -> Result<Tensor> {
    let [b, ci, h, wd] = x.dims4()?;
    let [wci, co, k] = filter_dims(w)?;
    if wci != ci {
        return Err(Error::Shape(format!("deconv input has {ci} channels, filters expect {wci}")));
    }
    check_bias(bias, co)?;
    let (oh, ow) = (deconv_out(h, k, stride, padding)?, deconv_out(wd, k, stride, padding)?);
    let g = Window { b, c: co, h: oh, w: ow, k, s: stride, p: padding, ho: h, wo: wd };
    let x_cm = batch_to_channel_major(x.data(), b, ci, h * wd);
    let mut cols = vec![0.0; g.rows() * g.cols()];
    gemm(g.rows(), ci, g.cols(), w.data(), true, &x_cm, false, &mut cols, 0.0);
    let mut y = col2im(&cols, g);
    add_channel_bias(&mut y, bias, b, co, oh * ow);
    Tensor::from_vec(&[b, co, oh, ow], y)
}

pub fn deconv2d_backward(x: &Tensor, w: &Tensor, dy: &Tensor, stride: usize, padding: usize) -> Result<LayerGrads> {
    let [b, ci, h, wd] = x.dims4()?;
    let [_, co, k] = filter_dims(w)?;
    let [_, dco, oh, ow] = dy.dims4()?;
    if dco != co {
        return Err(Error::Shape(format!("gradient has {dco} channels, filters produce {co}")));
    }
    let g = Window { b, c: co, h: oh, w: ow, k, s: stride, p: padding, ho: h, wo: wd };
    let dcols = im2col(dy.data(), g);
    let mut dx_cm = vec![0.0; ci * g.cols()];
    gemm(ci, g.rows(), g.cols(), w.data(), false, &dcols, false, &mut dx_cm, 0.0);
    let x_cm = batch_to_channel_major(x.data(), b, ci, h * wd);
    let mut dw = vec![0.0; w.len()];
    gemm(ci, g.cols(), g.rows(), &x_cm, false, &dcols, true, &mut dw, 0.0);
    Ok(LayerGrads {
        input: Tensor::from_vec(x.shape(), channel_to_batch_major(&dx_cm, b, ci, h * wd))?,
        weight: Tensor::from_vec(w.shape(), dw)?,
        bias: channel_sums(dy.data(), b, co, oh * ow),
    })
}

fn dense_dims(x: &Tensor, w: &Tensor) -> Result<(usize, usize, usize)> {
    let (&[out, inp], Some(&b)) = (w.shape(), x.shape().first()) else {
        return Err(Error::Shape(format!("dense weights must be [out, in], got {:?}", w.shape())));
    };
    if b == 0 || x.len() != b * inp {
        return Err(Error::Shape(format!("dense input {:?} does not flatten to {inp} features", x.shape())));
    }
    Ok((b, inp, out))
}

/// `y = x·Wᵀ + b` for `x` flattened to `[B, in]` and `w: [out, in]`.
pub fn dense(x: &Tensor, w: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let (b, inp, out) = dense_dims(x, w)?;
    check_bias(bias, out)?;
    let mut y = vec![0.0; b * out];
    if let Some(bias) = bias {
        for row in y.chunks_exact_mut(out) {
            row.copy_from_slice(bias.data());
        }
    }
    gemm(b, inp, out, x.data(), false, w.data(), true, &mut y, if bias.is_some() { 1.0 } else { 0.0 });
    Tensor::from_vec(&[b, out], y)
}

pub fn dense_backward(x: &Tensor, w: &Tensor, dy: &Tensor) -> Result<LayerGrads> {
    let (b, inp, out) = dense_dims(x, w)?;
    if dy.len() != b * out {
        return Err(Error::Shape(format!("dense gradient {:?} for output [{b}, {out}]", dy.shape())));
    }
    let mut dx = vec![0.0; b * inp];
    gemm(b, out, inp, dy.data(), false, w.data(), false, &mut dx, 0.0);
    let mut dw = vec![0.0; out * inp];
    gemm(out, b, inp, dy.data(), true, x.data(), false, &mut dw, 0.0);
    let mut db = vec![0.0; out];
    for row in dy.data().chunks_exact(out) {
        for (acc, v) in db.iter_mut().zip(row) {
            *acc += v;
        }
    }
    Ok(LayerGrads {
        input: Tensor::from_vec(x.shape(), dx)?,
        weight: Tensor::from_vec(w.shape(), dw)?,
        bias: Tensor::from_vec(&[out], db)?,
    })
}

pub fn relu(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    relu_inplace(&mut y);
    y
}

pub fn relu_inplace(x: &mut Tensor) {
    for v in x.data_mut() {
        *v = v.max(0.0);
    }
}

/// Gradient through a ReLU given its output.
pub fn relu_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    let data = y.data().iter().zip(dy.data()).map(|(&a, &g)| if a > 0.0 { g } else { 0.0 }).collect();
    Tensor::from_vec(dy.shape(), data).expect("same shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    /// Direct cross-correlation with explicit loops.
    fn conv_naive(x: &Tensor, w: &Tensor, bias: &Tensor, s: usize, p: usize) -> Tensor {
        let [b, ci, h, wd] = x.dims4().unwrap();
        let [co, _, k, _] = w.dims4().unwrap();
        let (ho, wo) = (conv_out(h, k, s, p).unwrap(), conv_out(wd, k, s, p).unwrap());
        let mut y = Tensor::zeros(&[b, co, ho, wo]);
        for bi in 0..b {
            for o in 0..co {
                for r in 0..ho {
                    for c in 0..wo {
                        let mut acc = bias.data()[o];
                        for i in 0..ci {
                            for ki in 0..k {
                                for kj in 0..k {
                                    let (ih, iw) = ((r * s + ki) as isize - p as isize, (c * s + kj) as isize - p as isize);
                                    if ih < 0 || iw < 0 || ih >= h as isize || iw >= wd as isize {
                                        continue;
                                    }
                                    acc += w.data()[((o * ci + i) * k + ki) * k + kj]
                                        * x.data()[((bi * ci + i) * h + ih as usize) * wd + iw as usize];
                                }
                            }
                        }
                        y.data_mut()[((bi * co + o) * ho + r) * wo + c] = acc;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn conv_small_example() {
        let x = Tensor::from_vec(&[1, 1, 3, 3], (1..=9).map(f64::from).collect()).unwrap();
        let w = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let y = conv2d(&x, &w, None, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[6.0, 8.0, 12.0, 14.0]);
    }

    #[test]
    fn conv_delta_filter_crops() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&[2, 1, 5, 5], &mut rng);
        let mut w = Tensor::zeros(&[1, 1, 3, 3]);
        w.data_mut()[0] = 1.0;
        let y = conv2d(&x, &w, None, 1, 0).unwrap();
        for b in 0..2 {
            for r in 0..3 {
                for c in 0..3 {
                    assert_eq!(y.data()[(b * 3 + r) * 3 + c], x.data()[(b * 5 + r) * 5 + c]);
                }
            }
        }
        let z = conv2d(&x, &Tensor::zeros(&[1, 1, 3, 3]), Some(&Tensor::zeros(&[1])), 1, 0).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (ci, co, h, k, s, p) in [(2, 3, 7, 3, 2, 1), (3, 2, 8, 4, 2, 1), (1, 4, 16, 8, 4, 2), (2, 2, 5, 1, 1, 0)] {
            let x = random(&[3, ci, h, h], &mut rng);
            let w = random(&[co, ci, k, k], &mut rng);
            let b = random(&[co], &mut rng);
            let got = conv2d(&x, &w, Some(&b), s, p).unwrap();
            let want = conv_naive(&x, &w, &b, s, p);
            assert_eq!(got.shape(), want.shape());
            for (a, b) in got.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn non_integral_conv_is_rejected() {
        assert!(conv_out(8, 3, 2, 0).is_err());
        assert_eq!(conv_out(8, 4, 2, 1).unwrap(), 4);
        assert_eq!(deconv_out(4, 4, 2, 1).unwrap(), 8);
        let x = Tensor::zeros(&[1, 1, 8, 8]);
        assert!(matches!(conv2d(&x, &Tensor::zeros(&[1, 1, 3, 3]), None, 2, 0), Err(Error::Shape(_))));
        assert!(conv2d(&x, &Tensor::zeros(&[1, 2, 3, 3]), None, 1, 0).is_err());
    }

    #[test]
    fn deconv_single_tap_broadcasts_filter() {
        let x = Tensor::from_vec(&[1, 1, 1, 1], vec![3.0]).unwrap();
        let w = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = deconv2d(&x, &w, None, 1, 0).unwrap();
        assert_eq!(y.data(), &[3.0, 6.0, 9.0, 12.0]);
        let z = deconv2d(&Tensor::zeros(&[2, 1, 3, 3]), &w, None, 2, 0).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deconv_is_adjoint_of_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..40 {
            let k = rng.gen_range(1..=5);
            let s = rng.gen_range(1..=3);
            let p = rng.gen_range(0..k);
            let ho: usize = rng.gen_range(1..=4);
            let Some(h) = ((ho - 1) * s + k).checked_sub(2 * p).filter(|&h| h > 0) else { continue };
            let (ci, co, b) = (rng.gen_range(1..=3), rng.gen_range(1..=3), rng.gen_range(1..=2));
            let w = random(&[co, ci, k, k], &mut rng);
            let x = random(&[b, ci, h, h], &mut rng);
            let cx = conv2d(&x, &w, None, s, p).unwrap();
            let y = random(cx.shape(), &mut rng);
            let dy = deconv2d(&y, &w, None, s, p).unwrap();
            assert_eq!(dy.shape(), x.shape());
            let (l, r) = (cx.dot(&y), x.dot(&dy));
            assert!((l - r).abs() <= 1e-10 * l.abs().max(r.abs()).max(1e-300), "{l} vs {r}");
        }
    }

    #[test]
    fn dense_matches_matvec() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random(&[3, 5], &mut rng);
        let w = random(&[4, 5], &mut rng);
        let b = random(&[4], &mut rng);
        let y = dense(&x, &w, Some(&b)).unwrap();
        for bi in 0..3 {
            for o in 0..4 {
                let want: f64 = b.data()[o] + (0..5).map(|i| w.data()[o * 5 + i] * x.data()[bi * 5 + i]).sum::<f64>();
                assert!((y.data()[bi * 4 + o] - want).abs() < 1e-12);
            }
        }
        let eye = Tensor::from_fn(&[5, 5], |i| if i / 5 == i % 5 { 1.0 } else { 0.0 });
        assert_eq!(dense(&x, &eye, Some(&Tensor::zeros(&[5]))).unwrap().data(), x.data());
    }

    #[test]
    fn relu_values() {
        let x = Tensor::from_vec(&[2], vec![-1.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 2.0]);
    }
}
