//! Layer kernels. The slice-level functions are what the model runs; the
//! `Tensor` wrappers validate shapes for callers outside the model.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{cast, NetError, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Valid,
    /// Zero padding, `(k - 1) / 2` on the left and the rest on the right.
    Same,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    None,
    Relu,
}

pub(crate) fn conv_out_len(t: usize, k: usize, pad: Padding) -> Option<usize> {
    match pad {
        Padding::Valid => t.checked_sub(k).map(|d| d + 1),
        Padding::Same => Some(t),
    }
}

/// Kernel taps `[jlo, jhi)` that land inside the input for output position `i`.
#[inline]
fn tap_range(i: usize, t: usize, k: usize, off: usize) -> (usize, usize) {
    let jlo = off.saturating_sub(i);
    let jhi = k.min(t + off - i);
    (jlo, jhi)
}

#[inline]
fn axpy<T: Scalar>(y: &mut [T], a: T, x: &[T]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += a * xv;
    }
}

/// Dot product with eight independent accumulators so it vectorizes.
#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (&x, &y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

/// `input [n, t, cin]`, `kernel [k, cin, cout]`, `bias [cout]` to `[n, tout, cout]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_forward<T: Scalar>(
    input: &[T],
    n: usize,
    t: usize,
    cin: usize,
    kernel: &[T],
    k: usize,
    cout: usize,
    bias: &[T],
    pad: Padding,
    relu: bool,
) -> Result<(Vec<T>, usize), NetError> {
    debug_assert_eq!(input.len(), n * t * cin);
    debug_assert_eq!(kernel.len(), k * cin * cout);
    let tout = conv_out_len(t, k, pad)
        .filter(|&l| l > 0)
        .ok_or_else(|| NetError::ShapeMismatch(format!("input length {t} shorter than kernel {k}")))?;
    let off = if pad == Padding::Same { (k - 1) / 2 } else { 0 };
    let mut out = vec![T::zero(); n * tout * cout];
    for b in 0..n {
        let x = &input[b * t * cin..(b + 1) * t * cin];
        let y = &mut out[b * tout * cout..(b + 1) * tout * cout];
        for (i, yi) in y.chunks_exact_mut(cout).enumerate() {
            yi.copy_from_slice(bias);
            let (jlo, jhi) = tap_range(i, t, k, off);
            let start = (i + jlo - off) * cin;
            let xs = &x[start..start + (jhi - jlo) * cin];
            let ks = &kernel[jlo * cin * cout..jhi * cin * cout];
            for (&xv, krow) in xs.iter().zip(ks.chunks_exact(cout)) {
                if xv != T::zero() {
                    axpy(yi, xv, krow);
                }
            }
            if relu {
                yi.iter_mut().for_each(|v| {
                    if *v < T::zero() {
                        *v = T::zero()
                    }
                });
            }
        }
    }
    Ok((out, tout))
}

/// Backward pass of [`conv_forward`]. `dout` is overwritten with the
/// pre-activation gradient. Kernel and bias gradients are accumulated.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward<T: Scalar>(
    input: &[T],
    n: usize,
    t: usize,
    cin: usize,
    kernel: &[T],
    k: usize,
    cout: usize,
    pad: Padding,
    output: &[T],
    relu: bool,
    dout: &mut [T],
    dkernel: &mut [T],
    dbias: &mut [T],
    want_dinput: bool,
) -> Option<Vec<T>> {
    let tout = dout.len() / (n * cout);
    let off = if pad == Padding::Same { (k - 1) / 2 } else { 0 };
    let mut dinput = want_dinput.then(|| vec![T::zero(); n * t * cin]);
    for b in 0..n {
        let x = &input[b * t * cin..(b + 1) * t * cin];
        for i in 0..tout {
            let row = (b * tout + i) * cout;
            let g = &mut dout[row..row + cout];
            if relu {
                for (gv, &ov) in g.iter_mut().zip(&output[row..row + cout]) {
                    if ov <= T::zero() {
                        *gv = T::zero();
                    }
                }
            }
            if g.iter().all(|v| *v == T::zero()) {
                continue;
            }
            let g = &*g;
            for (db, &gv) in dbias.iter_mut().zip(g) {
                *db += gv;
            }
            let (jlo, jhi) = tap_range(i, t, k, off);
            let start = (i + jlo - off) * cin;
            let len = (jhi - jlo) * cin;
            let xs = &x[start..start + len];
            let ks = &kernel[jlo * cin * cout..jhi * cin * cout];
            let dks = &mut dkernel[jlo * cin * cout..jhi * cin * cout];
            for (&xv, dk) in xs.iter().zip(dks.chunks_exact_mut(cout)) {
                if xv != T::zero() {
                    axpy(dk, xv, g);
                }
            }
            if let Some(dx) = dinput.as_mut() {
                let dxs = &mut dx[b * t * cin + start..b * t * cin + start + len];
                for (d, krow) in dxs.iter_mut().zip(ks.chunks_exact(cout)) {
                    *d += dot(krow, g);
                }
            }
        }
    }
    dinput
}

/// Max over non-overlapping windows; the trailing partial window is dropped.
/// Returns the output and the flat input index of each maximum (first on ties).
pub(crate) fn maxpool_forward<T: Scalar>(input: &[T], n: usize, t: usize, c: usize, size: usize) -> (Vec<T>, Vec<u32>) {
    let tout = t / size;
    let mut out = Vec::with_capacity(n * tout * c);
    let mut arg = Vec::with_capacity(n * tout * c);
    for b in 0..n {
        for i in 0..tout {
            for ch in 0..c {
                let mut best = (b * t + i * size) * c + ch;
                for j in 1..size {
                    let idx = (b * t + i * size + j) * c + ch;
                    if input[idx] > input[best] {
                        best = idx;
                    }
                }
                out.push(input[best]);
                arg.push(best as u32);
            }
        }
    }
    (out, arg)
}

/// Scatters `dout` back to the argmax positions.
pub(crate) fn pool_backward<T: Scalar>(dout: &[T], arg: &[u32], input_len: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); input_len];
    for (&g, &a) in dout.iter().zip(arg) {
        dx[a as usize] += g;
    }
    dx
}

/// Per-(sample, channel) multipliers: 0 with probability `rate`, otherwise
/// `1 / (1 - rate)`.
pub(crate) fn dropout_mask<T: Scalar>(rng: &mut impl Rng, n: usize, c: usize, rate: f64) -> Vec<T> {
    let keep: T = cast(1.0 / (1.0 - rate));
    (0..n * c)
        .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
        .collect()
}

/// Multiplies every time step of channel `ch` of sample `b` by `mask[b, ch]`.
pub(crate) fn apply_channel_mask<T: Scalar>(x: &mut [T], mask: &[T], n: usize, t: usize, c: usize) {
    for b in 0..n {
        let m = &mask[b * c..(b + 1) * c];
        for row in x[b * t * c..(b + 1) * t * c].chunks_exact_mut(c) {
            for (v, &s) in row.iter_mut().zip(m) {
                *v = *v * s;
            }
        }
    }
}

/// Row-wise stable softmax of `[rows, classes]` logits.
pub(crate) fn softmax_rows<T: Scalar>(logits: &[T], classes: usize) -> Vec<T> {
    let mut p = logits.to_vec();
    for row in p.chunks_exact_mut(classes) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut s = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v = *v / s;
        }
    }
    p
}

/// Mean cross-entropy, probabilities and the gradient `(p - onehot) / rows`.
pub(crate) fn xent_with_grad<T: Scalar>(
    logits: &[T],
    labels: &[u8],
    classes: usize,
) -> Result<(T, Vec<T>, Vec<T>), NetError> {
    let rows = labels.len();
    if logits.len() != rows * classes {
        return Err(NetError::ShapeMismatch(format!(
            "{} logits for {rows} labels",
            logits.len()
        )));
    }
    let probs = softmax_rows(logits, classes);
    let mut loss = T::zero();
    let mut grad = probs.clone();
    let inv: T = cast(1.0 / rows as f64);
    for (r, &l) in labels.iter().enumerate() {
        if l as usize >= classes {
            return Err(NetError::LabelOutOfRange(l));
        }
        let row = &logits[r * classes..(r + 1) * classes];
        // log-sum-exp form keeps the loss finite when p underflows
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = m + row.iter().map(|&z| (z - m).exp()).sum::<T>().ln();
        loss += lse - row[l as usize];
        grad[r * classes + l as usize] = grad[r * classes + l as usize] - T::one();
    }
    grad.iter_mut().for_each(|g| *g = *g * inv);
    Ok((loss * inv, probs, grad))
}

fn check_finite<T: Scalar>(t: Tensor<T>) -> Result<Tensor<T>, NetError> {
    if t.is_finite() {
        Ok(t)
    } else {
        Err(NetError::NonFiniteWeight("output".into()))
    }
}

/// 1-D convolution of `input [b, t, c_in]` with `kernel [k, c_in, c_out]`.
pub fn conv1d<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    padding: Padding,
    activation: Activation,
) -> Result<Tensor<T>, NetError> {
    let [b, t, cin] = input.dims("conv1d input")?;
    let [k, kcin, cout] = kernel.dims("conv1d kernel")?;
    if kcin != cin || bias.shape() != [cout] || k == 0 {
        return Err(NetError::ShapeMismatch(format!(
            "conv1d: input {:?}, kernel {:?}, bias {:?}",
            input.shape(),
            kernel.shape(),
            bias.shape()
        )));
    }
    let (out, tout) = conv_forward(
        input.data(),
        b,
        t,
        cin,
        kernel.data(),
        k,
        cout,
        bias.data(),
        padding,
        activation == Activation::Relu,
    )?;
    check_finite(Tensor::new(vec![b, tout, cout], out)?)
}

/// Max pooling over time with window and stride `size`.
pub fn maxpool1d<T: Scalar>(input: &Tensor<T>, size: usize) -> Result<Tensor<T>, NetError> {
    let [b, t, c] = input.dims("maxpool1d input")?;
    if size == 0 {
        return Err(NetError::ShapeMismatch("pool size 0".into()));
    }
    let (out, _) = maxpool_forward(input.data(), b, t, c, size);
    Tensor::new(vec![b, t / size, c], out)
}

/// Zeroes whole channels with probability `rate` in training; identity when
/// `training` is false.
pub fn spatial_dropout<T: Scalar>(
    input: &Tensor<T>,
    rate: f64,
    training: bool,
    rng: &mut impl Rng,
) -> Result<Tensor<T>, NetError> {
    let [b, t, c] = input.dims("spatial_dropout input")?;
    if !(0.0..1.0).contains(&rate) {
        return Err(NetError::InvalidConfig(format!("dropout rate {rate}")));
    }
    let mut out = input.clone();
    if training && rate > 0.0 {
        let mask = dropout_mask(rng, b, c, rate);
        apply_channel_mask(out.data_mut(), &mask, b, t, c);
    }
    Ok(out)
}

/// Per-channel maximum over time, `[b, t, c]` to `[b, c]`.
pub fn global_maxpool<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>, NetError> {
    let [b, t, c] = input.dims("global_maxpool input")?;
    if t == 0 {
        return Err(NetError::ShapeMismatch("global_maxpool over empty time axis".into()));
    }
    let (out, _) = maxpool_forward(input.data(), b, t, c, t);
    Tensor::new(vec![b, c], out)
}

/// Affine map `input [b, n] · weight [n, m] + bias`.
pub fn dense<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    activation: Activation,
) -> Result<Tensor<T>, NetError> {
    let [b, n] = input.dims("dense input")?;
    let [wn, m] = weight.dims("dense weight")?;
    if wn != n || bias.shape() != [m] {
        return Err(NetError::ShapeMismatch(format!(
            "dense: input {:?}, weight {:?}, bias {:?}",
            input.shape(),
            weight.shape(),
            bias.shape()
        )));
    }
    let (out, _) = conv_forward(
        input.data(),
        b,
        1,
        n,
        weight.data(),
        1,
        m,
        bias.data(),
        Padding::Valid,
        activation == Activation::Relu,
    )?;
    check_finite(Tensor::new(vec![b, m], out)?)
}

/// Softmax over the last axis and mean cross-entropy against `labels`
/// (one label per row of the flattened leading axes).
pub fn softmax_xent<T: Scalar>(logits: &Tensor<T>, labels: &[u8]) -> Result<(T, Tensor<T>), NetError> {
    let classes = *logits
        .shape()
        .last()
        .ok_or_else(|| NetError::ShapeMismatch("scalar logits".into()))?;
    let (loss, probs, _) = xent_with_grad(logits.data(), labels, classes)?;
    Ok((loss, Tensor::new(logits.shape().to_vec(), probs)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t1(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape.to_vec(), v).unwrap()
    }

    /// Direct transcription of the definition, used as oracle.
    #[allow(clippy::too_many_arguments)]
    fn naive_conv(
        x: &[f64],
        t: usize,
        cin: usize,
        ker: &[f64],
        k: usize,
        cout: usize,
        bias: &[f64],
        same: bool,
    ) -> Vec<f64> {
        let off = if same { (k as isize - 1) / 2 } else { 0 };
        let tout = if same { t } else { t - k + 1 };
        let mut y = vec![0.0; tout * cout];
        for i in 0..tout {
            for o in 0..cout {
                let mut s = bias[o];
                for j in 0..k {
                    let src = i as isize + j as isize - off;
                    if src < 0 || src >= t as isize {
                        continue;
                    }
                    for c in 0..cin {
                        s += x[src as usize * cin + c] * ker[(j * cin + c) * cout + o];
                    }
                }
                y[i * cout + o] = s;
            }
        }
        y
    }

    #[test]
    fn conv_examples() {
        let x = t1(&[1, 3, 1], &[1.0, 2.0, 3.0]);
        let k = t1(&[3, 1, 1], &[1.0, 0.0, -1.0]);
        let b = t1(&[1], &[0.0]);
        let y = conv1d(&x, &k, &b, Padding::Valid, Activation::None).unwrap();
        assert_eq!(y.shape(), [1, 1, 1]);
        assert_eq!(y.data(), [-2.0]);
        let y = conv1d(&x, &k, &b, Padding::Valid, Activation::Relu).unwrap();
        assert_eq!(y.data(), [0.0]);
        let id = conv1d(&x, &t1(&[1, 1, 1], &[1.0]), &b, Padding::Valid, Activation::None).unwrap();
        assert_eq!(id, x);
        assert!(conv1d(&x, &t1(&[4, 1, 1], &[1.0; 4]), &b, Padding::Valid, Activation::None).is_err());
    }

    #[test]
    fn conv_matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(t, cin, k, cout, same) in &[
            (17, 3, 5, 4, false),
            (17, 3, 5, 4, true),
            (9, 2, 8, 3, true),
            (6, 1, 1, 9, false),
        ] {
            let x: Vec<f64> = (0..t * cin).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let w: Vec<f64> = (0..k * cin * cout).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..cout).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let pad = if same { Padding::Same } else { Padding::Valid };
            let y = conv1d(
                &t1(&[1, t, cin], &x),
                &t1(&[k, cin, cout], &w),
                &t1(&[cout], &b),
                pad,
                Activation::None,
            )
            .unwrap();
            let want = naive_conv(&x, t, cin, &w, k, cout, &b, same);
            for (a, e) in y.data().iter().zip(&want) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn maxpool_examples() {
        let y = maxpool1d(&t1(&[1, 4, 1], &[1.0, 3.0, 2.0, 5.0]), 2).unwrap();
        assert_eq!(y.data(), [3.0, 5.0]);
        let y = maxpool1d(&t1(&[1, 3, 1], &[1.0, 3.0, 2.0]), 2).unwrap();
        assert_eq!(y.data(), [3.0]);
        let y = maxpool1d(&t1(&[1, 6, 1], &[7.0; 6]), 2).unwrap();
        assert_eq!(y.data(), [7.0; 3]);
    }

    #[test]
    fn global_maxpool_examples() {
        let x = t1(&[1, 2, 2], &[1.0, 4.0, 2.0, 0.0]);
        assert_eq!(global_maxpool(&x).unwrap().data(), [2.0, 4.0]);
        let one = t1(&[2, 1, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let g = global_maxpool(&one).unwrap();
        assert_eq!((g.shape(), g.data()), (&[2usize, 3][..], one.data()));
        let shifted = t1(&[1, 2, 2], &[6.0, 9.0, 7.0, 5.0]);
        assert_eq!(global_maxpool(&shifted).unwrap().data(), [7.0, 9.0]);
    }

    #[test]
    fn dropout_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = t1(&[2, 5, 3], &(1..=30).map(f64::from).collect::<Vec<_>>());
        assert_eq!(spatial_dropout(&x, 0.5, false, &mut rng).unwrap(), x);
        assert_eq!(spatial_dropout(&x, 0.0, true, &mut rng).unwrap(), x);
        let y = spatial_dropout(&x, 0.5, true, &mut rng).unwrap();
        // whole channels are either dropped or doubled
        for b in 0..2 {
            for c in 0..3 {
                let ratio = |i: usize| y.data()[(b * 5 + i) * 3 + c] / x.data()[(b * 5 + i) * 3 + c];
                let r0 = ratio(0);
                assert!(r0 == 0.0 || r0 == 2.0);
                assert!((1..5).all(|i| ratio(i) == r0));
            }
        }
    }

    #[test]
    fn dropout_preserves_mean_in_expectation() {
        let x = Tensor::<f64>::from_f64(vec![1, 4, 16], &vec![1.0; 64]).unwrap();
        let mut total = 0.0;
        let runs = 4000;
        for s in 0..runs {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            total += spatial_dropout(&x, 0.1, true, &mut rng)
                .unwrap()
                .data()
                .iter()
                .sum::<f64>()
                / 64.0;
        }
        assert!((total / runs as f64 - 1.0).abs() < 0.02);
    }

    #[test]
    fn dense_examples() {
        let x = t1(&[1, 2], &[1.0, 2.0]);
        let eye = t1(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(
            dense(&x, &eye, &t1(&[2], &[0.0, 0.0]), Activation::None)
                .unwrap()
                .data(),
            x.data()
        );
        let ones = t1(&[2, 1], &[1.0, 1.0]);
        assert_eq!(
            dense(&x, &ones, &t1(&[1], &[0.0]), Activation::None).unwrap().data(),
            [3.0]
        );
    }

    #[test]
    fn dense_matches_matmul_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (b, n, m) = (3, 7, 4);
        // small integers keep every product and sum exact
        let x: Vec<f64> = (0..b * n).map(|_| rng.gen_range(-5..=5) as f64).collect();
        let w: Vec<f64> = (0..n * m).map(|_| rng.gen_range(-5..=5) as f64).collect();
        let bias: Vec<f64> = (0..m).map(|_| rng.gen_range(-5..=5) as f64).collect();
        let y = dense(&t1(&[b, n], &x), &t1(&[n, m], &w), &t1(&[m], &bias), Activation::None).unwrap();
        for r in 0..b {
            for c in 0..m {
                let want: f64 = bias[c] + (0..n).map(|i| x[r * n + i] * w[i * m + c]).sum::<f64>();
                assert_eq!(y.data()[r * m + c], want);
            }
        }
    }

    #[test]
    fn softmax_xent_examples() {
        let (loss, p) = softmax_xent(&t1(&[1, 1, 5], &[0.0; 5]), &[2]).unwrap();
        assert!((loss - 5f64.ln()).abs() < 1e-12);
        assert!(p.data().iter().all(|&v| (v - 0.2).abs() < 1e-12));
        let (loss, _) = softmax_xent(&t1(&[1, 5], &[0.0, 1e6, 0.0, 0.0, 0.0]), &[1]).unwrap();
        assert!(loss.abs() < 1e-12);
        let (loss, _) = softmax_xent(&t1(&[1, 5], &[0.0, 1e6, 0.0, 0.0, 0.0]), &[0]).unwrap();
        assert!(loss.is_finite() && loss > 1e5);
        assert!(softmax_xent(&t1(&[1, 5], &[0.0; 5]), &[5]).is_err());
    }

    #[test]
    fn xent_f32_matches_f64_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z: Vec<f64> = (0..40).map(|_| rng.gen_range(-8.0..8.0)).collect();
        let labels: Vec<u8> = (0..8).map(|_| rng.gen_range(0..5)).collect();
        let want: f64 = labels
            .iter()
            .enumerate()
            .map(|(r, &l)| {
                let row = &z[r * 5..r * 5 + 5];
                row.iter().map(|v| v.exp()).sum::<f64>().ln() - row[l as usize]
            })
            .sum::<f64>()
            / 8.0;
        let (loss, _) = softmax_xent(&Tensor::<f32>::from_f64(vec![8, 5], &z).unwrap(), &labels).unwrap();
        assert!((loss as f64 - want).abs() < 1e-6);
    }

    #[test]
    fn xent_gradient_is_p_minus_onehot() {
        let z = [0.5, -1.0, 2.0, 0.0, 0.3, 1.0, 1.0, 1.0, 1.0, 1.0];
        let (_, p, g) = xent_with_grad(&z, &[2, 4], 5).unwrap();
        for r in 0..2 {
            for c in 0..5 {
                let onehot = if c == [2, 4][r] { 1.0 } else { 0.0 };
                assert_eq!(g[r * 5 + c], (p[r * 5 + c] - onehot) * 0.5);
            }
        }
    }

    #[test]
    fn dot_matches_sequential_sum() {
        let a: Vec<f64> = (0..21).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..21).map(|i| (i % 3) as f64).collect();
        assert_eq!(dot(&a, &b), a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>());
    }
}
