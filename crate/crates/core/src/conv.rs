//! Grouped 2-D convolution (cross-correlation, zero padding).
//!
//! [`conv2d`] dispatches to a depthwise kernel, a pointwise GEMM, or im2col +
//! GEMM. [`conv2d_naive`] is the seven-loop reference used as the oracle for all
//! of them.

use alloc::vec;

use crate::{Error, Real, Result, Tensor};

/// Stride, padding and group count; kernel size and channels come from the weight.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub groups: usize,
}

impl ConvGeometry {
    pub fn new(stride: (usize, usize), padding: (usize, usize), groups: usize) -> Self {
        Self {
            stride,
            padding,
            groups,
        }
    }

    /// Stride 1, padding `(k - 1) / 2`.
    pub fn same(kernel: usize, groups: usize) -> Self {
        Self::new((1, 1), ((kernel - 1) / 2, (kernel - 1) / 2), groups)
    }
}

/// One convolution: geometry, weight `(C_out, C_in/groups, K_h, K_w)` and optional bias `(C_out)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvSpec<T> {
    pub geometry: ConvGeometry,
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

impl<T: Real> ConvSpec<T> {
    pub fn new(geometry: ConvGeometry, weight: Tensor<T>, bias: Option<Tensor<T>>) -> Result<Self> {
        let [c_out, _, _, _] = weight.dims4()?;
        if geometry.groups == 0 || c_out % geometry.groups != 0 {
            return Err(Error::InvalidGroups {
                groups: geometry.groups,
                in_channels: weight.shape()[1] * geometry.groups.max(1),
                out_channels: c_out,
            });
        }
        if geometry.stride.0 == 0 || geometry.stride.1 == 0 {
            return Err(Error::Config("stride must be positive".into()));
        }
        if let Some(b) = &bias {
            if b.shape() != [c_out] {
                return Err(Error::ParamLength {
                    op: "conv2d bias",
                    expected: c_out,
                    got: b.len(),
                });
            }
        }
        Ok(Self {
            geometry,
            weight,
            bias,
        })
    }

    /// All-zero weights (and bias when `bias` is set).
    pub fn zeros(
        geometry: ConvGeometry,
        out_channels: usize,
        in_per_group: usize,
        kernel: (usize, usize),
        bias: bool,
    ) -> Result<Self> {
        let weight = Tensor::zeros(&[out_channels, in_per_group, kernel.0, kernel.1])?;
        let bias = if bias {
            Some(Tensor::zeros(&[out_channels])?)
        } else {
            None
        };
        Self::new(geometry, weight, bias)
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1] * self.geometry.groups
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn kernel(&self) -> (usize, usize) {
        (self.weight.shape()[2], self.weight.shape()[3])
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.as_ref().map_or(0, Tensor::len)
    }

    pub fn output_shape(&self, input_shape: &[usize]) -> Result<[usize; 4]> {
        Layout::new(input_shape, self.weight.shape(), &self.geometry).map(|l| l.output_shape())
    }
}

/// Validated sizes of one convolution call.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Layout {
    pub batch: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub cg_in: usize,
    pub cg_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub ph: usize,
    pub pw: usize,
    pub oh: usize,
    pub ow: usize,
}

impl Layout {
    pub fn new(input: &[usize], weight: &[usize], g: &ConvGeometry) -> Result<Self> {
        let [batch, c_in, h, w] = four(input, "conv2d input")?;
        let [c_out, cg_in, kh, kw] = four(weight, "conv2d weight")?;
        let groups = g.groups;
        if groups == 0 || c_in % groups != 0 || c_out % groups != 0 {
            return Err(Error::InvalidGroups {
                groups,
                in_channels: c_in,
                out_channels: c_out,
            });
        }
        if c_in / groups != cg_in {
            return Err(Error::ChannelMismatch {
                op: "conv2d",
                expected: cg_in * groups,
                got: c_in,
            });
        }
        let (sh, sw) = g.stride;
        let (ph, pw) = g.padding;
        if sh == 0 || sw == 0 || h + 2 * ph < kh || w + 2 * pw < kw {
            return Err(Error::EmptyOutput {
                input: input.to_vec(),
            });
        }
        Ok(Self {
            batch,
            c_in,
            h,
            w,
            c_out,
            cg_in,
            cg_out: c_out / groups,
            kh,
            kw,
            sh,
            sw,
            ph,
            pw,
            oh: (h + 2 * ph - kh) / sh + 1,
            ow: (w + 2 * pw - kw) / sw + 1,
        })
    }

    pub fn output_shape(&self) -> [usize; 4] {
        [self.batch, self.c_out, self.oh, self.ow]
    }

    /// Range of output columns whose tap `k` lands inside the input row.
    #[inline]
    fn valid_cols(&self, k: usize) -> (usize, usize) {
        valid_range(self.w, self.ow, self.sw, self.pw, k)
    }

    #[inline]
    fn valid_rows(&self, k: usize) -> (usize, usize) {
        valid_range(self.h, self.oh, self.sh, self.ph, k)
    }
}

fn four(shape: &[usize], op: &'static str) -> Result<[usize; 4]> {
    match *shape {
        [a, b, c, d] => Ok([a, b, c, d]),
        _ => Err(Error::Rank {
            op,
            expected: 4,
            got: shape.len(),
        }),
    }
}

/// Output indices `o` in `[lo, hi)` satisfy `0 <= o*s + k - p < n`.
#[inline]
fn valid_range(n: usize, out: usize, s: usize, p: usize, k: usize) -> (usize, usize) {
    let lo = if k >= p { 0 } else { (p - k).div_ceil(s) };
    let hi = if n + p > k {
        ((n + p - k - 1) / s + 1).min(out)
    } else {
        0
    };
    (lo.min(hi), hi)
}

fn check_bias<T: Real>(bias: Option<&Tensor<T>>, c_out: usize) -> Result<()> {
    match bias {
        Some(b) if b.shape() != [c_out] => Err(Error::ParamLength {
            op: "conv2d bias",
            expected: c_out,
            got: b.len(),
        }),
        _ => Ok(()),
    }
}

pub fn conv2d<T: Real>(input: &Tensor<T>, spec: &ConvSpec<T>) -> Result<Tensor<T>> {
    conv2d_with(input, &spec.weight, spec.bias.as_ref(), &spec.geometry)
}

pub fn conv2d_naive<T: Real>(input: &Tensor<T>, spec: &ConvSpec<T>) -> Result<Tensor<T>> {
    conv2d_naive_with(input, &spec.weight, spec.bias.as_ref(), &spec.geometry)
}

/// Optimized convolution on raw parts.
pub fn conv2d_with<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    geometry: &ConvGeometry,
) -> Result<Tensor<T>> {
    let l = Layout::new(input.shape(), weight.shape(), geometry)?;
    check_bias(bias, l.c_out)?;
    let mut out = vec![T::zero(); l.batch * l.c_out * l.oh * l.ow];
    if l.cg_in == 1 {
        depthwise(&l, input.data(), weight.data(), &mut out);
    } else if l.kh == 1 && l.kw == 1 && l.sh == 1 && l.sw == 1 && l.ph == 0 && l.pw == 0 {
        pointwise(&l, input.data(), weight.data(), &mut out);
    } else {
        im2col_gemm(&l, input.data(), weight.data(), &mut out);
    }
    if let Some(b) = bias {
        add_bias(&l, b.data(), &mut out);
    }
    Ok(Tensor::from_parts(l.output_shape().to_vec(), out))
}

fn add_bias<T: Real>(l: &Layout, bias: &[T], out: &mut [T]) {
    let plane = l.oh * l.ow;
    for (i, chunk) in out.chunks_exact_mut(plane).enumerate() {
        let b = bias[i % l.c_out];
        chunk.iter_mut().for_each(|v| *v = *v + b);
    }
}

/// One input channel per group: direct loops with the bounds hoisted out of
/// the inner column loop.
fn depthwise<T: Real>(l: &Layout, input: &[T], weight: &[T], out: &mut [T]) {
    let in_plane = l.h * l.w;
    let out_plane = l.oh * l.ow;
    for b in 0..l.batch {
        for oc in 0..l.c_out {
            let ic = oc / l.cg_out;
            let src = &input[(b * l.c_in + ic) * in_plane..][..in_plane];
            let dst = &mut out[(b * l.c_out + oc) * out_plane..][..out_plane];
            let kern = &weight[oc * l.kh * l.kw..][..l.kh * l.kw];
            for ki in 0..l.kh {
                let (r0, r1) = l.valid_rows(ki);
                for kj in 0..l.kw {
                    let wv = kern[ki * l.kw + kj];
                    let (c0, c1) = l.valid_cols(kj);
                    if c0 >= c1 {
                        continue;
                    }
                    for oy in r0..r1 {
                        let iy = oy * l.sh + ki - l.ph;
                        let row = &src[iy * l.w..][..l.w];
                        let drow = &mut dst[oy * l.ow..][..l.ow];
                        let ix0 = c0 * l.sw + kj - l.pw;
                        if l.sw == 1 {
                            for (d, &s) in drow[c0..c1].iter_mut().zip(&row[ix0..]) {
                                *d = *d + wv * s;
                            }
                        } else {
                            for (n, d) in drow[c0..c1].iter_mut().enumerate() {
                                *d = *d + wv * row[ix0 + n * l.sw];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `out[g] = W[g] · X[g]` with `X[g]` the `(Cg_in, H·W)` slab.
fn pointwise<T: Real>(l: &Layout, input: &[T], weight: &[T], out: &mut [T]) {
    let plane = l.h * l.w;
    let groups = l.c_in / l.cg_in;
    for b in 0..l.batch {
        for g in 0..groups {
            let x = &input[(b * l.c_in + g * l.cg_in) * plane..][..l.cg_in * plane];
            let w = &weight[g * l.cg_out * l.cg_in..][..l.cg_out * l.cg_in];
            let y = &mut out[(b * l.c_out + g * l.cg_out) * plane..][..l.cg_out * plane];
            gemm(l.cg_out, l.cg_in, plane, w, x, y);
        }
    }
}

fn im2col_gemm<T: Real>(l: &Layout, input: &[T], weight: &[T], out: &mut [T]) {
    let in_plane = l.h * l.w;
    let out_plane = l.oh * l.ow;
    let groups = l.c_in / l.cg_in;
    let rows = l.cg_in * l.kh * l.kw;
    let mut col = vec![T::zero(); rows * out_plane];
    for b in 0..l.batch {
        for g in 0..groups {
            let x = &input[(b * l.c_in + g * l.cg_in) * in_plane..][..l.cg_in * in_plane];
            im2col(l, x, &mut col);
            let w = &weight[g * l.cg_out * rows..][..l.cg_out * rows];
            let y = &mut out[(b * l.c_out + g * l.cg_out) * out_plane..][..l.cg_out * out_plane];
            gemm(l.cg_out, rows, out_plane, w, &col, y);
        }
    }
}

/// Unfolds one group's input into `(Cg_in·K_h·K_w, H_out·W_out)`; padded taps stay zero.
fn im2col<T: Real>(l: &Layout, x: &[T], col: &mut [T]) {
    let in_plane = l.h * l.w;
    let out_plane = l.oh * l.ow;
    col.iter_mut().for_each(|v| *v = T::zero());
    for c in 0..l.cg_in {
        let src = &x[c * in_plane..][..in_plane];
        for ki in 0..l.kh {
            let (r0, r1) = l.valid_rows(ki);
            for kj in 0..l.kw {
                let (c0, c1) = l.valid_cols(kj);
                let row = &mut col[((c * l.kh + ki) * l.kw + kj) * out_plane..][..out_plane];
                for oy in r0..r1 {
                    let iy = oy * l.sh + ki - l.ph;
                    for ox in c0..c1 {
                        row[oy * l.ow + ox] = src[iy * l.w + ox * l.sw + kj - l.pw];
                    }
                }
            }
        }
    }
}

/// `y (m×n) += a (m×k) · b (k×n)`, all row-major, i-k-j order.
fn gemm<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], y: &mut [T]) {
    for i in 0..m {
        let yrow = &mut y[i * n..][..n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            for (yv, &bv) in yrow.iter_mut().zip(&b[p * n..][..n]) {
                *yv = *yv + av * bv;
            }
        }
    }
}

/// Direct nested-loop convolution; the reference for [`conv2d_with`].
pub fn conv2d_naive_with<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    geometry: &ConvGeometry,
) -> Result<Tensor<T>> {
    let l = Layout::new(input.shape(), weight.shape(), geometry)?;
    check_bias(bias, l.c_out)?;
    let mut out = Tensor::zeros(&l.output_shape())?;
    let x = input.data();
    let wt = weight.data();
    let o = out.data_mut();
    for b in 0..l.batch {
        for oc in 0..l.c_out {
            let g = oc / l.cg_out;
            for oy in 0..l.oh {
                for ox in 0..l.ow {
                    let mut acc = bias.map_or(T::zero(), |bb| bb.data()[oc]);
                    for icg in 0..l.cg_in {
                        let ic = g * l.cg_in + icg;
                        for ki in 0..l.kh {
                            for kj in 0..l.kw {
                                let iy = (oy * l.sh + ki) as isize - l.ph as isize;
                                let ix = (ox * l.sw + kj) as isize - l.pw as isize;
                                if iy < 0 || ix < 0 || iy >= l.h as isize || ix >= l.w as isize {
                                    continue;
                                }
                                let xv = x[((b * l.c_in + ic) * l.h + iy as usize) * l.w + ix as usize];
                                let wv = wt[((oc * l.cg_in + icg) * l.kh + ki) * l.kw + kj];
                                acc = acc + xv * wv;
                            }
                        }
                    }
                    o[((b * l.c_out + oc) * l.oh + oy) * l.ow + ox] = acc;
                }
            }
        }
    }
    Ok(out)
}

/// Vector-Jacobian products of a convolution: `(d_input, d_weight, d_bias)`.
pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    geometry: &ConvGeometry,
    d_out: &Tensor<T>,
    with_bias: bool,
) -> Result<ConvGrads<T>> {
    let l = Layout::new(input.shape(), weight.shape(), geometry)?;
    if d_out.shape() != l.output_shape() {
        return Err(Error::ShapeMismatch {
            op: "conv2d_backward",
            lhs: l.output_shape().to_vec(),
            rhs: d_out.shape().to_vec(),
        });
    }
    let mut dx = Tensor::zeros(input.shape())?;
    let mut dw = Tensor::zeros(weight.shape())?;
    let x = input.data();
    let wt = weight.data();
    let dy = d_out.data();
    {
        let dxs = dx.data_mut();
        let dws = dw.data_mut();
        for b in 0..l.batch {
            for oc in 0..l.c_out {
                let g = oc / l.cg_out;
                for icg in 0..l.cg_in {
                    let ic = g * l.cg_in + icg;
                    let xin = (b * l.c_in + ic) * l.h * l.w;
                    for ki in 0..l.kh {
                        let (r0, r1) = l.valid_rows(ki);
                        for kj in 0..l.kw {
                            let (c0, c1) = l.valid_cols(kj);
                            let widx = ((oc * l.cg_in + icg) * l.kh + ki) * l.kw + kj;
                            let wv = wt[widx];
                            let mut acc = T::zero();
                            for oy in r0..r1 {
                                let iy = oy * l.sh + ki - l.ph;
                                let orow = ((b * l.c_out + oc) * l.oh + oy) * l.ow;
                                for ox in c0..c1 {
                                    let ix = ox * l.sw + kj - l.pw;
                                    let g = dy[orow + ox];
                                    let xi = xin + iy * l.w + ix;
                                    acc = acc + g * x[xi];
                                    dxs[xi] = dxs[xi] + g * wv;
                                }
                            }
                            dws[widx] = dws[widx] + acc;
                        }
                    }
                }
            }
        }
    }
    let db = if with_bias {
        let plane = l.oh * l.ow;
        let mut db = vec![T::zero(); l.c_out];
        for (i, chunk) in dy.chunks_exact(plane).enumerate() {
            db[i % l.c_out] = db[i % l.c_out] + chunk.iter().copied().sum();
        }
        Some(Tensor::from_parts(vec![l.c_out], db))
    } else {
        None
    };
    Ok((dx, dw, db))
}

/// Input, weight and optional bias gradients.
pub type ConvGrads<T> = (Tensor<T>, Tensor<T>, Option<Tensor<T>>);

/// FLOPs of one convolution call, counting a multiply-add as two.
pub fn flop_count<T: Real>(spec: &ConvSpec<T>, input_shape: &[usize]) -> Result<u64> {
    flop_count_raw(spec.weight.shape(), &spec.geometry, input_shape)
}

pub fn flop_count_raw(weight_shape: &[usize], geometry: &ConvGeometry, input_shape: &[usize]) -> Result<u64> {
    let l = Layout::new(input_shape, weight_shape, geometry)?;
    Ok(2 * (l.kh * l.kw * l.cg_in * l.c_out * l.oh * l.ow * l.batch) as u64)
}
