use super::{Scalar, Shape, Tensor};
use crate::error::{Error, Result};

/// Valid-mode strided 1-D cross-correlation of one signal against a bank of
/// kernels stored row-major in `kernels` (`n_kernels * kernel_len`).
///
/// `out` is laid out `[n_kernels][n_frames]`. Products are accumulated in
/// `f64` regardless of `T`.
pub fn conv1d_valid_into<T: Scalar>(
    signal: &[T],
    kernels: &[T],
    kernel_len: usize,
    hop: usize,
    out: &mut [T],
) -> Result<usize> {
    if hop == 0 {
        return Err(Error::domain("hop must be at least 1"));
    }
    if kernel_len == 0 || kernels.len() % kernel_len != 0 {
        return Err(Error::domain("kernel bank length is not a multiple of the kernel length"));
    }
    if kernel_len > signal.len() {
        return Err(Error::domain(format!(
            "kernel length {kernel_len} exceeds signal length {}",
            signal.len()
        )));
    }
    let n_kernels = kernels.len() / kernel_len;
    let n_frames = (signal.len() - kernel_len) / hop + 1;
    if out.len() != n_kernels * n_frames {
        return Err(Error::domain(format!(
            "output buffer holds {} values, need {}",
            out.len(),
            n_kernels * n_frames
        )));
    }
    let mut frame64 = vec![0.0f64; kernel_len];
    for t in 0..n_frames {
        let frame = &signal[t * hop..t * hop + kernel_len];
        for (dst, &v) in frame64.iter_mut().zip(frame) {
            *dst = v.as_f64();
        }
        for (k, kernel) in kernels.chunks_exact(kernel_len).enumerate() {
            let acc: f64 = kernel
                .iter()
                .zip(&frame64)
                .map(|(&w, &x)| w.as_f64() * x)
                .sum();
            out[k * n_frames + t] = T::from_f64(acc);
        }
    }
    Ok(n_frames)
}

/// `output[k][t] = sum_n signal[t*hop + n] * kernels[k][n]`, no kernel flip,
/// no padding. Returns `[n_kernels, n_frames]`.
pub fn conv1d_valid<T: Scalar>(signal: &Tensor<T>, kernels: &Tensor<T>, hop: usize) -> Result<Tensor<T>> {
    if signal.rank() != 1 || kernels.rank() != 2 {
        return Err(Error::domain("conv1d_valid expects a rank-1 signal and a rank-2 kernel bank"));
    }
    let (n_kernels, kernel_len) = (kernels.dims()[0], kernels.dims()[1]);
    if hop == 0 {
        return Err(Error::domain("hop must be at least 1"));
    }
    if kernel_len > signal.len() {
        return Err(Error::domain(format!(
            "kernel length {kernel_len} exceeds signal length {}",
            signal.len()
        )));
    }
    let n_frames = (signal.len() - kernel_len) / hop + 1;
    let mut out = vec![T::zero(); n_kernels * n_frames];
    conv1d_valid_into(signal.data(), kernels.data(), kernel_len, hop, &mut out)?;
    Ok(Tensor::from_parts(Shape(vec![n_kernels, n_frames]), out))
}

const COLUMN_BLOCK: usize = 256;

/// Valid-mode strided 2-D cross-correlation.
///
/// `input` is `[C_in, H, W]`, `kernels` is `[C_out, C_in, kH, kW]`; the result
/// is `[C_out, H', W']` with `H' = (H - kH) / stride_h + 1`.
pub fn conv2d_strided<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    stride: (usize, usize),
) -> Result<Tensor<T>> {
    if input.rank() != 3 || kernels.rank() != 4 {
        return Err(Error::domain("conv2d_strided expects [C,H,W] input and [Co,Ci,kH,kW] kernels"));
    }
    let (c_in, h, w) = (input.dims()[0], input.dims()[1], input.dims()[2]);
    let (c_out, kc, kh, kw) = (kernels.dims()[0], kernels.dims()[1], kernels.dims()[2], kernels.dims()[3]);
    let (sh, sw) = stride;
    if sh == 0 || sw == 0 {
        return Err(Error::domain("strides must be at least 1"));
    }
    if kc != c_in {
        return Err(Error::domain(format!("kernel expects {kc} input channels, input has {c_in}")));
    }
    if kh > h || kw > w {
        return Err(Error::domain(format!("kernel {kh}x{kw} exceeds input extent {h}x{w}")));
    }
    let oh = (h - kh) / sh + 1;
    let ow = (w - kw) / sw + 1;
    let positions = oh * ow;
    let taps = c_in * kh * kw;

    // im2col: row r = (ci, ky, kx), column p = (oy, ox)
    let src = input.data();
    let mut cols = vec![T::zero(); taps * positions];
    for ci in 0..c_in {
        for ky in 0..kh {
            for kx in 0..kw {
                let r = (ci * kh + ky) * kw + kx;
                let row = &mut cols[r * positions..(r + 1) * positions];
                for oy in 0..oh {
                    let base = ci * h * w + (oy * sh + ky) * w + kx;
                    let dst = &mut row[oy * ow..(oy + 1) * ow];
                    if sw == 1 {
                        dst.copy_from_slice(&src[base..base + ow]);
                    } else {
                        for (ox, d) in dst.iter_mut().enumerate() {
                            *d = src[base + ox * sw];
                        }
                    }
                }
            }
        }
    }

    let weights = kernels.data();
    let mut out = vec![T::zero(); c_out * positions];
    let mut acc = [0.0f64; COLUMN_BLOCK];
    for start in (0..positions).step_by(COLUMN_BLOCK) {
        let end = (start + COLUMN_BLOCK).min(positions);
        let width = end - start;
        for co in 0..c_out {
            let acc = &mut acc[..width];
            acc.fill(0.0);
            let wrow = &weights[co * taps..(co + 1) * taps];
            for (r, &wv) in wrow.iter().enumerate() {
                let wv = wv.as_f64();
                let col = &cols[r * positions + start..r * positions + end];
                for (a, &x) in acc.iter_mut().zip(col) {
                    *a += wv * x.as_f64();
                }
            }
            for (o, &a) in out[co * positions + start..co * positions + end].iter_mut().zip(acc.iter()) {
                *o = T::from_f64(a);
            }
        }
    }
    Ok(Tensor::from_parts(Shape(vec![c_out, oh, ow]), out))
}

/// Matrix product of `[M, K]` and `[K, N]`.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() != 2 || b.rank() != 2 {
        return Err(Error::domain("matmul expects rank-2 operands"));
    }
    let (m, k) = (a.dims()[0], a.dims()[1]);
    let (k2, n) = (b.dims()[0], b.dims()[1]);
    if k != k2 {
        return Err(Error::domain(format!(
            "matmul inner dimensions differ: {} vs {}",
            a.shape(),
            b.shape()
        )));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![T::zero(); m * n];
    let mut acc = vec![0.0f64; n];
    for i in 0..m {
        acc.fill(0.0);
        for p in 0..k {
            let av = ad[i * k + p].as_f64();
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in acc.iter_mut().zip(&bd[p * n..(p + 1) * n]) {
                *o += av * bv.as_f64();
            }
        }
        for (o, &v) in out[i * n..(i + 1) * n].iter_mut().zip(&acc) {
            *o = T::from_f64(v);
        }
    }
    Ok(Tensor::from_parts(Shape(vec![m, n]), out))
}

/// Maps every flat element to the index of its reduction group.
fn group_ids(dims: &[usize], reduced: &[bool]) -> (Vec<usize>, Vec<usize>) {
    let kept: Vec<usize> = dims
        .iter()
        .zip(reduced)
        .map(|(&d, &r)| if r { 1 } else { d })
        .collect();
    let kept_shape = Shape(kept.clone());
    let kept_strides = kept_shape.strides();
    let n: usize = dims.iter().product();
    let mut ids = Vec::with_capacity(n);
    let mut idx = vec![0usize; dims.len()];
    for _ in 0..n {
        let g = idx
            .iter()
            .zip(&kept_strides)
            .zip(reduced)
            .map(|((&i, &s), &r)| if r { 0 } else { i * s })
            .sum();
        ids.push(g);
        for ax in (0..dims.len()).rev() {
            idx[ax] += 1;
            if idx[ax] < dims[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    (ids, kept)
}

/// Mean and population standard deviation over `axes`, keeping reduced
/// dimensions with size 1.
///
/// A group whose values are all identical gets exactly that value as mean
/// and exactly 0 as standard deviation.
pub fn reduce_stats<T: Scalar>(t: &Tensor<T>, axes: &[usize]) -> Result<(Tensor<T>, Tensor<T>)> {
    if t.is_empty() {
        return Err(Error::domain("cannot reduce an empty tensor"));
    }
    let rank = t.rank();
    let mut reduced = vec![false; rank];
    for &ax in axes {
        if ax >= rank {
            return Err(Error::domain(format!("axis {ax} out of range for rank {rank}")));
        }
        reduced[ax] = true;
    }
    let (ids, kept) = group_ids(t.dims(), &reduced);
    let groups: usize = kept.iter().product();
    let mut sum = vec![0.0f64; groups];
    let mut count = vec![0usize; groups];
    let mut lo = vec![f64::INFINITY; groups];
    let mut hi = vec![f64::NEG_INFINITY; groups];
    for (&g, &v) in ids.iter().zip(t.data()) {
        let v = v.as_f64();
        sum[g] += v;
        count[g] += 1;
        lo[g] = lo[g].min(v);
        hi[g] = hi[g].max(v);
    }
    let mean: Vec<f64> = (0..groups)
        .map(|g| if lo[g] == hi[g] { lo[g] } else { sum[g] / count[g] as f64 })
        .collect();
    let mut sq = vec![0.0f64; groups];
    for (&g, &v) in ids.iter().zip(t.data()) {
        let d = v.as_f64() - mean[g];
        sq[g] += d * d;
    }
    let std: Vec<T> = (0..groups)
        .map(|g| {
            if lo[g] == hi[g] {
                T::zero()
            } else {
                T::from_f64((sq[g] / count[g] as f64).sqrt())
            }
        })
        .collect();
    let shape = Shape(kept);
    Ok((
        Tensor::from_parts(shape.clone(), mean.into_iter().map(T::from_f64).collect()),
        Tensor::from_parts(shape, std),
    ))
}

/// `(t - mean) / (std + eps)` with `mean`/`std` broadcast over their size-1
/// dimensions.
pub fn normalize_with_stats<T: Scalar>(
    t: &Tensor<T>,
    mean: &Tensor<T>,
    std: &Tensor<T>,
    eps: f64,
) -> Result<Tensor<T>> {
    if mean.shape() != std.shape() || mean.rank() != t.rank() {
        return Err(Error::domain("statistics must share the input rank and each other's shape"));
    }
    let mut reduced = vec![false; t.rank()];
    for (ax, (&sd, &td)) in mean.dims().iter().zip(t.dims()).enumerate() {
        if sd == 1 && td != 1 {
            reduced[ax] = true;
        } else if sd != td {
            return Err(Error::domain(format!(
                "statistics shape {} does not broadcast to {}",
                mean.shape(),
                t.shape()
            )));
        }
    }
    let (ids, _) = group_ids(t.dims(), &reduced);
    let data = ids
        .iter()
        .zip(t.data())
        .map(|(&g, &v)| {
            let m = mean.data()[g].as_f64();
            let s = std.data()[g].as_f64();
            T::from_f64((v.as_f64() - m) / (s + eps))
        })
        .collect();
    Ok(Tensor::from_parts(t.shape().clone(), data))
}

pub fn relu<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    t.map(|v| v.max(T::zero()))
}

/// `log10(max(x, amin))` pointwise.
pub fn log10_clamped<T: Scalar>(t: &Tensor<T>, amin: f64) -> Tensor<T> {
    t.map(|v| T::from_f64(v.as_f64().max(amin).log10()))
}

/// `a * x + b` pointwise.
pub fn scale_add<T: Scalar>(t: &Tensor<T>, a: T, b: T) -> Tensor<T> {
    t.map(|v| a * v + b)
}
