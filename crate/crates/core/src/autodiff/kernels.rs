//! Dense loops shared by the forward and backward rules.

/// `out[m,n] = a[m,k] · b[n,k]ᵀ`
pub fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let ar = &a[i * k..(i + 1) * k];
        let or = &mut out[i * n..(i + 1) * n];
        for (j, o) in or.iter_mut().enumerate() {
            let br = &b[j * k..(j + 1) * k];
            *o = ar.iter().zip(br).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `out[m,n] = a[m,k] · b[k,n]`
pub fn matmul_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let or = &mut out[i * n..(i + 1) * n];
        for kk in 0..k {
            let aik = a[i * k + kk];
            if aik == 0.0 {
                continue;
            }
            let br = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in or.iter_mut().zip(br) {
                *o += aik * bv;
            }
        }
    }
    out
}

/// `out[m,n] = a[k,m]ᵀ · b[k,n]`
pub fn matmul_tn(a: &[f64], b: &[f64], k: usize, m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for kk in 0..k {
        let ar = &a[kk * m..(kk + 1) * m];
        let br = &b[kk * n..(kk + 1) * n];
        for (i, &aik) in ar.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let or = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in or.iter_mut().zip(br) {
                *o += aik * bv;
            }
        }
    }
    out
}

/// Geometry of a stride-1 2-D convolution over NHWC input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub padding: usize,
}

impl ConvGeom {
    pub fn out_height(&self) -> usize {
        self.height + 2 * self.padding + 1 - self.kernel
    }

    pub fn out_width(&self) -> usize {
        self.width + 2 * self.padding + 1 - self.kernel
    }

    /// Width of one unfolded patch: `kernel * kernel * in_channels`.
    pub fn patch_len(&self) -> usize {
        self.kernel * self.kernel * self.in_channels
    }

    pub fn out_positions(&self) -> usize {
        self.batch * self.out_height() * self.out_width()
    }
}

/// Unfolds NHWC input into `[positions, kh*kw*c]` patches (zero padded).
pub fn im2col(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (oh, ow, pl) = (g.out_height(), g.out_width(), g.patch_len());
    let mut cols = vec![0.0; g.out_positions() * pl];
    let c = g.in_channels;
    for b in 0..g.batch {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = ((b * oh + oy) * ow + ox) * pl;
                for ky in 0..g.kernel {
                    let iy = oy + ky;
                    if iy < g.padding || iy - g.padding >= g.height {
                        continue;
                    }
                    let iy = iy - g.padding;
                    for kx in 0..g.kernel {
                        let ix = ox + kx;
                        if ix < g.padding || ix - g.padding >= g.width {
                            continue;
                        }
                        let ix = ix - g.padding;
                        let src = ((b * g.height + iy) * g.width + ix) * c;
                        let dst = row + (ky * g.kernel + kx) * c;
                        cols[dst..dst + c].copy_from_slice(&x[src..src + c]);
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the input.
pub fn col2im(cols: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (oh, ow, pl) = (g.out_height(), g.out_width(), g.patch_len());
    let c = g.in_channels;
    let mut x = vec![0.0; g.batch * g.height * g.width * c];
    for b in 0..g.batch {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = ((b * oh + oy) * ow + ox) * pl;
                for ky in 0..g.kernel {
                    let iy = oy + ky;
                    if iy < g.padding || iy - g.padding >= g.height {
                        continue;
                    }
                    let iy = iy - g.padding;
                    for kx in 0..g.kernel {
                        let ix = ox + kx;
                        if ix < g.padding || ix - g.padding >= g.width {
                            continue;
                        }
                        let ix = ix - g.padding;
                        let dst = ((b * g.height + iy) * g.width + ix) * c;
                        let src = row + (ky * g.kernel + kx) * c;
                        for ch in 0..c {
                            x[dst + ch] += cols[src + ch];
                        }
                    }
                }
            }
        }
    }
    x
}
