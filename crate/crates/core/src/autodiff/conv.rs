//! im2col convolution kernels (cross-correlation, no kernel flip).

use crate::error::TensorError;
use crate::tensor::{gemm, MatRef, Scalar};

/// Zero-padding policy for [`crate::autodiff::Tape::conv2d`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Padding {
    /// Pad by `k - 1` in total (top/left get the floor half), so a stride-1
    /// convolution preserves spatial size.
    Same,
    Valid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub batch: usize,
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(
        input: &[usize],
        kernel: &[usize],
        bias: &[usize],
        stride: usize,
        padding: Padding,
    ) -> Result<Self, TensorError> {
        let mismatch = |detail: String| TensorError::ShapeMismatch { op: "conv2d", detail };
        let [batch, in_c, in_h, in_w] = input[..] else {
            return Err(mismatch(format!("input must be [B,C,H,W], got {input:?}")));
        };
        let [out_c, k_c, kh, kw] = kernel[..] else {
            return Err(mismatch(format!("kernel must be [F,C,kh,kw], got {kernel:?}")));
        };
        if k_c != in_c {
            return Err(mismatch(format!(
                "input has {in_c} channels but kernel {kernel:?} expects {k_c}"
            )));
        }
        if bias != [out_c] {
            return Err(mismatch(format!("bias must be [{out_c}], got {bias:?}")));
        }
        if stride == 0 {
            return Err(TensorError::InvalidArgument("conv2d stride must be >= 1".into()));
        }
        if kh == 0 || kw == 0 {
            return Err(mismatch(format!("empty kernel {kernel:?}")));
        }
        let (pad_h, pad_w) = match padding {
            Padding::Same => (kh - 1, kw - 1),
            Padding::Valid => (0, 0),
        };
        if kh > in_h + pad_h || kw > in_w + pad_w {
            return Err(mismatch(format!(
                "kernel {kh}x{kw} exceeds padded input {}x{}",
                in_h + pad_h,
                in_w + pad_w
            )));
        }
        Ok(Self {
            batch,
            in_c,
            in_h,
            in_w,
            out_c,
            kh,
            kw,
            stride,
            pad_top: pad_h / 2,
            pad_left: pad_w / 2,
            out_h: (in_h + pad_h - kh) / stride + 1,
            out_w: (in_w + pad_w - kw) / stride + 1,
        })
    }

    pub fn output_shape(&self) -> Vec<usize> {
        vec![self.batch, self.out_c, self.out_h, self.out_w]
    }

    fn col_rows(&self) -> usize {
        self.in_c * self.kh * self.kw
    }

    fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    fn in_sample(&self) -> usize {
        self.in_c * self.in_h * self.in_w
    }

    fn out_sample(&self) -> usize {
        self.out_c * self.out_h * self.out_w
    }

    /// Input row (or column) read by output position `o` at kernel tap `k`.
    #[inline]
    fn source(o: usize, k: usize, stride: usize, pad: usize, limit: usize) -> Option<usize> {
        let pos = (o * stride + k) as isize - pad as isize;
        (pos >= 0 && (pos as usize) < limit).then_some(pos as usize)
    }

    /// Output positions `lo..hi` whose tap `k` lands inside the input, and
    /// the input position read by `lo`.
    #[inline]
    fn span(k: usize, stride: usize, pad: usize, limit: usize, out: usize) -> (usize, usize, usize) {
        let lo = pad.saturating_sub(k).div_ceil(stride);
        let hi = if limit + pad > k { (limit + pad - k - 1) / stride + 1 } else { 0 };
        let hi = hi.min(out);
        if lo >= hi {
            return (0, 0, 0);
        }
        (lo, hi, lo * stride + k - pad)
    }

    fn im2col<T: Scalar>(&self, x: &[T], cols: &mut [T]) {
        let n = self.col_cols();
        let (s, ow) = (self.stride, self.out_w);
        for c in 0..self.in_c {
            let plane = &x[c * self.in_h * self.in_w..(c + 1) * self.in_h * self.in_w];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = (c * self.kh + i) * self.kw + j;
                    let dst = &mut cols[row * n..(row + 1) * n];
                    let (lo, hi, ix0) = Self::span(j, s, self.pad_left, self.in_w, ow);
                    for oy in 0..self.out_h {
                        let seg = &mut dst[oy * ow..(oy + 1) * ow];
                        match Self::source(oy, i, s, self.pad_top, self.in_h) {
                            None => seg.fill(T::zero()),
                            Some(iy) => {
                                let src = &plane[iy * self.in_w..(iy + 1) * self.in_w];
                                seg[..lo].fill(T::zero());
                                seg[hi..].fill(T::zero());
                                if s == 1 {
                                    seg[lo..hi].copy_from_slice(&src[ix0..ix0 + hi - lo]);
                                } else {
                                    for (v, &x) in seg[lo..hi].iter_mut().zip(src[ix0..].iter().step_by(s)) {
                                        *v = x;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im_add<T: Scalar>(&self, cols: &[T], dx: &mut [T]) {
        let n = self.col_cols();
        let (s, ow) = (self.stride, self.out_w);
        for c in 0..self.in_c {
            let plane = &mut dx[c * self.in_h * self.in_w..(c + 1) * self.in_h * self.in_w];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = (c * self.kh + i) * self.kw + j;
                    let src = &cols[row * n..(row + 1) * n];
                    let (lo, hi, ix0) = Self::span(j, s, self.pad_left, self.in_w, ow);
                    for oy in 0..self.out_h {
                        let Some(iy) = Self::source(oy, i, s, self.pad_top, self.in_h) else {
                            continue;
                        };
                        let seg = &src[oy * ow + lo..oy * ow + hi];
                        let dst = &mut plane[iy * self.in_w..(iy + 1) * self.in_w];
                        for (d, &v) in dst[ix0..].iter_mut().step_by(s).zip(seg) {
                            *d += v;
                        }
                    }
                }
            }
        }
    }

    pub fn forward<T: Scalar>(&self, x: &[T], kernel: &[T], bias: &[T]) -> Vec<T> {
        let (rows, n) = (self.col_rows(), self.col_cols());
        let mut cols = vec![T::zero(); rows * n];
        let mut out = vec![T::zero(); self.batch * self.out_sample()];
        for b in 0..self.batch {
            let xs = &x[b * self.in_sample()..(b + 1) * self.in_sample()];
            let ys = &mut out[b * self.out_sample()..(b + 1) * self.out_sample()];
            self.im2col(xs, &mut cols);
            for (f, plane) in ys.chunks_mut(n).enumerate() {
                plane.iter_mut().for_each(|v| *v = bias[f]);
            }
            gemm(MatRef::new(kernel, self.out_c, rows), MatRef::new(&cols, rows, n), ys, true);
        }
        out
    }

    /// Accumulates gradients into `dx` (if requested), `dk` and `db`.
    pub fn backward<T: Scalar>(
        &self,
        x: &[T],
        kernel: &[T],
        dy: &[T],
        mut dx: Option<&mut [T]>,
        dk: &mut [T],
        db: &mut [T],
    ) {
        let (rows, n) = (self.col_rows(), self.col_cols());
        let mut cols = vec![T::zero(); rows * n];
        let mut dcols = vec![T::zero(); rows * n];
        for b in 0..self.batch {
            let xs = &x[b * self.in_sample()..(b + 1) * self.in_sample()];
            let dys = &dy[b * self.out_sample()..(b + 1) * self.out_sample()];
            for (f, plane) in dys.chunks(n).enumerate() {
                db[f] += plane.iter().copied().sum::<T>();
            }
            self.im2col(xs, &mut cols);
            // dK += dY_b * cols^T
            gemm(MatRef::new(dys, self.out_c, n), MatRef::transposed(&cols, n, rows), dk, true);
            if let Some(dx) = dx.as_deref_mut() {
                // dcols = K^T * dY_b
                gemm(
                    MatRef::transposed(kernel, rows, self.out_c),
                    MatRef::new(dys, self.out_c, n),
                    &mut dcols,
                    false,
                );
                self.col2im_add(&dcols, &mut dx[b * self.in_sample()..(b + 1) * self.in_sample()]);
            }
        }
    }
}
