//! Raw numeric kernels behind the differentiable ops. All buffers are NCHW row-major.

use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    fn col_rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn col_cols(&self) -> usize {
        self.ho * self.wo
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col<T: Real>(g: &ConvGeom, img: &[T], cols: &mut [T]) {
    let hw_out = g.col_cols();
    for ci in 0..g.c {
        let plane = &img[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * hw_out..(row + 1) * hw_out];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Real>(g: &ConvGeom, cols: &[T], img: &mut [T]) {
    let hw_out = g.col_cols();
    for ci in 0..g.c {
        let plane = &mut img[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let src = &cols[row * hw_out..(row + 1) * hw_out];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let line = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            line[ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Real>(g: &ConvGeom, input: &[T], kernel: &[T]) -> Vec<T> {
    let (rows, cols_n) = (g.col_rows(), g.col_cols());
    let in_sz = g.c * g.h * g.w;
    let out_sz = g.o * cols_n;
    let mut out = vec![T::zero(); g.n * out_sz];
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); rows * cols_n]
    };
    for b in 0..g.n {
        let img = &input[b * in_sz..(b + 1) * in_sz];
        let colv: &[T] = if g.is_pointwise() {
            img
        } else {
            im2col(g, img, &mut cols);
            &cols
        };
        T::gemm(
            g.o,
            rows,
            cols_n,
            T::one(),
            kernel,
            rows as isize,
            1,
            colv,
            cols_n as isize,
            1,
            T::zero(),
            &mut out[b * out_sz..(b + 1) * out_sz],
            cols_n as isize,
            1,
        );
    }
    out
}

/// Accumulates input and kernel gradients for an upstream gradient `grad_out`.
pub(crate) fn conv2d_backward<T: Real>(
    g: &ConvGeom,
    input: &[T],
    kernel: &[T],
    grad_out: &[T],
    grad_input: Option<&mut [T]>,
    grad_kernel: Option<&mut [T]>,
) {
    let (rows, cols_n) = (g.col_rows(), g.col_cols());
    let in_sz = g.c * g.h * g.w;
    let out_sz = g.o * cols_n;
    let mut cols = vec![T::zero(); rows * cols_n];
    let mut grad_input = grad_input;
    let mut grad_kernel = grad_kernel;
    for b in 0..g.n {
        let dy = &grad_out[b * out_sz..(b + 1) * out_sz];
        if let Some(gk) = grad_kernel.as_deref_mut() {
            let img = &input[b * in_sz..(b + 1) * in_sz];
            let colv: &[T] = if g.is_pointwise() {
                img
            } else {
                im2col(g, img, &mut cols);
                &cols
            };
            // gk[o, r] += sum_p dy[o, p] * col[r, p]
            T::gemm(
                g.o,
                cols_n,
                rows,
                T::one(),
                dy,
                cols_n as isize,
                1,
                colv,
                1,
                cols_n as isize,
                T::one(),
                gk,
                rows as isize,
                1,
            );
        }
        if let Some(gi) = grad_input.as_deref_mut() {
            let dst = &mut gi[b * in_sz..(b + 1) * in_sz];
            if g.is_pointwise() {
                T::gemm(
                    rows,
                    g.o,
                    cols_n,
                    T::one(),
                    kernel,
                    1,
                    rows as isize,
                    dy,
                    cols_n as isize,
                    1,
                    T::one(),
                    dst,
                    cols_n as isize,
                    1,
                );
            } else {
                T::gemm(
                    rows,
                    g.o,
                    cols_n,
                    T::one(),
                    kernel,
                    1,
                    rows as isize,
                    dy,
                    cols_n as isize,
                    1,
                    T::zero(),
                    &mut cols,
                    cols_n as isize,
                    1,
                );
                col2im_add(g, &cols, dst);
            }
        }
    }
}

/// 2×2 stride-2 max pool. Returns pooled values and the flat input index of each maximum.
pub(crate) fn maxpool2_forward<T: Real>(
    input: &[T],
    planes: usize,
    h: usize,
    w: usize,
) -> (Vec<T>, Vec<usize>) {
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(planes * ho * wo);
    let mut arg = Vec::with_capacity(planes * ho * wo);
    for p in 0..planes {
        let base = p * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    // first maximum wins on ties
                    if input[idx] > input[best] {
                        best = idx;
                    }
                }
                out.push(input[best]);
                arg.push(best);
            }
        }
    }
    (out, arg)
}

pub(crate) fn upsample2_forward<T: Real>(input: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let (h2, w2) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); planes * h2 * w2];
    for p in 0..planes {
        for y in 0..h2 {
            for x in 0..w2 {
                out[(p * h2 + y) * w2 + x] = input[(p * h + y / 2) * w + x / 2];
            }
        }
    }
    out
}

pub(crate) fn upsample2_backward<T: Real>(
    grad_out: &[T],
    grad_in: &mut [T],
    planes: usize,
    h: usize,
    w: usize,
) {
    let (h2, w2) = (2 * h, 2 * w);
    for p in 0..planes {
        for y in 0..h2 {
            for x in 0..w2 {
                grad_in[(p * h + y / 2) * w + x / 2] += grad_out[(p * h2 + y) * w2 + x];
            }
        }
    }
}

/// Softmax over axis 1 of an `n × c × inner` buffer, max-subtracted.
pub(crate) fn softmax_axis1<T: Real>(x: &[T], n: usize, c: usize, inner: usize, log: bool) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for b in 0..n {
        let base = b * c * inner;
        for p in 0..inner {
            let at = |ch: usize| base + ch * inner + p;
            let mut m = T::neg_infinity();
            for ch in 0..c {
                m = m.max(x[at(ch)]);
            }
            let mut z = T::zero();
            for ch in 0..c {
                z += (x[at(ch)] - m).exp();
            }
            if log {
                let lz = z.ln();
                for ch in 0..c {
                    out[at(ch)] = x[at(ch)] - m - lz;
                }
            } else {
                for ch in 0..c {
                    out[at(ch)] = (x[at(ch)] - m).exp() / z;
                }
            }
        }
    }
    out
}
