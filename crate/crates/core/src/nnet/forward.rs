use super::kernels::{col2im, gemm_nn, gemm_nt, gemm_tn, im2col, ConvGeom};
use super::{BranchedNet, Gradients, Layout, Scalar, Tensor, OUTPUT_DIM};
use crate::clustering::ClusterId;
use crate::error::{Error, Result};
use crate::geometry::Angles;

/// Activations of one routed batch, kept for [`BranchedNet::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    n: usize,
    cluster: ClusterId,
    /// `acts[0]` is the input, `acts[i]` the post-ReLU output of conv i.
    acts: Vec<Vec<T>>,
    pool_idx: Vec<u32>,
    pooled: Vec<T>,
    gap: Vec<T>,
    fc6: Vec<T>,
    fc7: Vec<T>,
    z: Vec<T>,
    out: Vec<[T; OUTPUT_DIM]>,
}

impl<T: Scalar> ForwardCache<T> {
    pub fn outputs(&self) -> &[[T; OUTPUT_DIM]] {
        &self.out
    }

    pub fn cluster(&self) -> ClusterId {
        self.cluster
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Post-ReLU `fc6` activations, `n x fc6_dim`.
    pub fn fc6(&self) -> &[T] {
        &self.fc6
    }
}

fn relu_inplace<T: Scalar>(v: &mut [T]) {
    for x in v {
        if !(*x > T::zero()) {
            *x = T::zero();
        }
    }
}

fn mask_relu<T: Scalar>(grad: &mut [T], act: &[T]) {
    for (g, &a) in grad.iter_mut().zip(act) {
        if !(a > T::zero()) {
            *g = T::zero();
        }
    }
}

/// Adds `bias[o]` to each of the `rows` rows of a `rows x bias.len()` matrix.
fn add_row_bias<T: Scalar>(m: &mut [T], bias: &[T]) {
    for row in m.chunks_exact_mut(bias.len()) {
        for (v, &b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

/// Column sums of an `rows x cols` matrix added into `out`.
fn add_col_sums<T: Scalar>(m: &[T], out: &mut [T]) {
    for row in m.chunks_exact(out.len()) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
}

impl<T: Scalar> BranchedNet<T> {
    fn layout(&self) -> Layout {
        self.config().layout().expect("validated at construction")
    }

    /// Routes a batch of `n` inputs (`[n, c, h, w]`, or `[c, h, w]` for one sample)
    /// through the trunk and head `cluster`, keeping activations for backprop.
    pub fn forward_cached(&self, x: &Tensor<T>, heads: &[Angles], cluster: ClusterId) -> Result<ForwardCache<T>> {
        self.check_cluster(cluster)?;
        let cfg = self.config();
        let expect = [cfg.input_channels, cfg.input_h, cfg.input_w];
        let n = match x.shape() {
            s if s == expect => 1,
            [n, rest @ ..] if rest == expect => *n,
            s => {
                return Err(Error::InvalidInput(format!(
                    "input shape {s:?} does not match [n, {}, {}, {}]",
                    expect[0], expect[1], expect[2]
                )))
            }
        };
        if heads.len() != n {
            return Err(Error::InvalidInput(format!("{n} inputs but {} head poses", heads.len())));
        }
        let l = self.layout();
        let t = &self.trunk;

        let mut acts: Vec<Vec<T>> = Vec::with_capacity(l.convs.len() + 1);
        acts.push(x.data().to_vec());
        let col_len = l.convs.iter().map(|g| g.rows() * g.cols()).max().unwrap_or(0);
        let mut col = vec![T::zero(); col_len];
        for (i, g) in l.convs.iter().enumerate() {
            let oc = t.conv_b[i].len();
            let in_len = g.c * g.h * g.w;
            let out_len = oc * g.cols();
            let mut out = vec![T::zero(); n * out_len];
            for s in 0..n {
                let xin = &acts[i][s * in_len..(s + 1) * in_len];
                let col = &mut col[..g.rows() * g.cols()];
                im2col(g, xin, col);
                let o = &mut out[s * out_len..(s + 1) * out_len];
                gemm_nn(t.conv_w[i].data(), col, o, oc, g.rows(), g.cols());
                for (row, &b) in o.chunks_exact_mut(g.cols()).zip(t.conv_b[i].data()) {
                    row.iter_mut().for_each(|v| *v += b);
                }
                relu_inplace(o);
            }
            acts.push(out);
        }

        let [c5, h5, w5] = l.conv_out;
        let [_, ph, pw] = l.pool_out;
        let pk = cfg.pool.kernel;
        let ps = cfg.pool.stride;
        let flat = l.flat();
        let mut pooled = vec![T::zero(); n * flat];
        let mut pool_idx = vec![0u32; n * flat];
        let a5 = &acts[5];
        for s in 0..n {
            let map = &a5[s * c5 * h5 * w5..(s + 1) * c5 * h5 * w5];
            for c in 0..c5 {
                for oy in 0..ph {
                    for ox in 0..pw {
                        let mut best = c * h5 * w5 + oy * ps * w5 + ox * ps;
                        for ky in 0..pk {
                            for kx in 0..pk {
                                let j = c * h5 * w5 + (oy * ps + ky) * w5 + ox * ps + kx;
                                if map[j] > map[best] {
                                    best = j;
                                }
                            }
                        }
                        let o = s * flat + (c * ph + oy) * pw + ox;
                        pooled[o] = map[best];
                        pool_idx[o] = best as u32;
                    }
                }
            }
        }

        let f6 = cfg.fc6_dim;
        let mut fc6 = vec![T::zero(); n * f6];
        gemm_nt(&pooled, t.fc6_w.data(), &mut fc6, n, flat, f6);
        add_row_bias(&mut fc6, t.fc6_b.data());
        let mut gap = Vec::new();
        if let Some(sw) = &t.skip_w {
            let g3 = &l.convs[3];
            let (c3, hw) = (g3.c, g3.h * g3.w);
            gap = vec![T::zero(); n * c3];
            let inv = T::lit(1.0 / hw as f64);
            for (s, chunk) in acts[3].chunks_exact(c3 * hw).enumerate() {
                for c in 0..c3 {
                    let sum: T = chunk[c * hw..(c + 1) * hw].iter().copied().sum();
                    gap[s * c3 + c] = sum * inv;
                }
            }
            gemm_nt(&gap, sw.data(), &mut fc6, n, c3, f6);
        }
        relu_inplace(&mut fc6);

        let head = &self.heads[cluster.index()];
        let f7 = cfg.fc7_dim;
        let mut fc7 = vec![T::zero(); n * f7];
        gemm_nt(&fc6, head.fc7_w.data(), &mut fc7, n, f6, f7);
        add_row_bias(&mut fc7, head.fc7_b.data());
        relu_inplace(&mut fc7);

        let zin = cfg.fc8_in();
        let mut z = vec![T::zero(); n * zin];
        for s in 0..n {
            z[s * zin..s * zin + f7].copy_from_slice(&fc7[s * f7..(s + 1) * f7]);
            if cfg.head_pose_inputs {
                z[s * zin + f7] = T::lit(heads[s].pitch);
                z[s * zin + f7 + 1] = T::lit(heads[s].yaw);
            }
        }
        let mut flat_out = vec![T::zero(); n * OUTPUT_DIM];
        gemm_nt(&z, head.fc8_w.data(), &mut flat_out, n, zin, OUTPUT_DIM);
        add_row_bias(&mut flat_out, head.fc8_b.data());
        if flat_out.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("network produced a non-finite output".into()));
        }
        let out = flat_out.chunks_exact(OUTPUT_DIM).map(|c| [c[0], c[1]]).collect();

        Ok(ForwardCache {
            n,
            cluster,
            acts,
            pool_idx,
            pooled,
            gap,
            fc6,
            fc7,
            z,
            out,
        })
    }

    /// Raw `(pitch, yaw)` outputs, radians.
    pub fn forward_batch(&self, x: &Tensor<T>, heads: &[Angles], cluster: ClusterId) -> Result<Vec<[T; OUTPUT_DIM]>> {
        Ok(self.forward_cached(x, heads, cluster)?.out)
    }

    /// Predicted gaze for one `[c, h, w]` input.
    pub fn forward(&self, img: &Tensor<T>, head: Angles, cluster: ClusterId) -> Result<Angles> {
        let o = self.forward_batch(img, &[head], cluster)?;
        if o.len() != 1 {
            return Err(Error::InvalidInput("forward expects a single sample".into()));
        }
        Ok(Angles {
            pitch: o[0][0].as_f64(),
            yaw: o[0][1].as_f64(),
        })
    }

    /// Gradients of `sum_i <d_out[i], out[i]>` for the cached batch: trunk parameters
    /// plus the routed head. Other heads are not materialized.
    pub fn backward(&self, cache: &ForwardCache<T>, d_out: &[[T; OUTPUT_DIM]]) -> Result<Gradients<T>> {
        let n = cache.n;
        if d_out.len() != n {
            return Err(Error::InvalidInput(format!("{n} cached samples but {} output gradients", d_out.len())));
        }
        let cfg = self.config();
        let l = self.layout();
        let t = &self.trunk;
        let head = &self.heads[cache.cluster.index()];
        let mut g = self.zero_gradients(&[cache.cluster]);
        let (gt, gh) = (&mut g.trunk, &mut g.heads[0].1);

        let dout: Vec<T> = d_out.iter().flatten().copied().collect();
        let (f6, f7, zin) = (cfg.fc6_dim, cfg.fc7_dim, cfg.fc8_in());
        gemm_tn(&dout, &cache.z, gh.fc8_w.data_mut(), OUTPUT_DIM, n, zin);
        add_col_sums(&dout, gh.fc8_b.data_mut());
        let mut dz = vec![T::zero(); n * zin];
        gemm_nn(&dout, head.fc8_w.data(), &mut dz, n, OUTPUT_DIM, zin);

        let mut d7 = vec![T::zero(); n * f7];
        for s in 0..n {
            d7[s * f7..(s + 1) * f7].copy_from_slice(&dz[s * zin..s * zin + f7]);
        }
        mask_relu(&mut d7, &cache.fc7);
        gemm_tn(&d7, &cache.fc6, gh.fc7_w.data_mut(), f7, n, f6);
        add_col_sums(&d7, gh.fc7_b.data_mut());
        let mut d6 = vec![T::zero(); n * f6];
        gemm_nn(&d7, head.fc7_w.data(), &mut d6, n, f7, f6);
        mask_relu(&mut d6, &cache.fc6);

        let flat = l.flat();
        gemm_tn(&d6, &cache.pooled, gt.fc6_w.data_mut(), f6, n, flat);
        add_col_sums(&d6, gt.fc6_b.data_mut());
        let mut dpooled = vec![T::zero(); n * flat];
        gemm_nn(&d6, t.fc6_w.data(), &mut dpooled, n, f6, flat);

        // Gradient w.r.t. each conv output; index i matches `cache.acts[i]`.
        let mut dact: Vec<Vec<T>> = cache.acts.iter().map(|a| vec![T::zero(); a.len()]).collect();
        let c5_len: usize = l.conv_out.iter().product();
        for s in 0..n {
            for j in 0..flat {
                let o = s * flat + j;
                dact[5][s * c5_len + cache.pool_idx[o] as usize] += dpooled[o];
            }
        }

        if let (Some(sw), Some(gsw)) = (&t.skip_w, &mut gt.skip_w) {
            let g3 = &l.convs[3];
            let (c3, hw) = (g3.c, g3.h * g3.w);
            gemm_tn(&d6, &cache.gap, gsw.data_mut(), f6, n, c3);
            let mut dgap = vec![T::zero(); n * c3];
            gemm_nn(&d6, sw.data(), &mut dgap, n, f6, c3);
            let inv = T::lit(1.0 / hw as f64);
            for s in 0..n {
                for c in 0..c3 {
                    let v = dgap[s * c3 + c] * inv;
                    let base = (s * c3 + c) * hw;
                    dact[3][base..base + hw].iter_mut().for_each(|d| *d += v);
                }
            }
        }

        let col_len = l.convs.iter().map(|g| g.rows() * g.cols()).max().unwrap_or(0);
        let mut col = vec![T::zero(); col_len];
        let mut dcol = vec![T::zero(); col_len];
        for i in (0..l.convs.len()).rev() {
            let gm: &ConvGeom = &l.convs[i];
            let oc = t.conv_b[i].len();
            let (rows, cols) = (gm.rows(), gm.cols());
            let in_len = gm.c * gm.h * gm.w;
            let out_len = oc * cols;
            let (lower, upper) = dact.split_at_mut(i + 1);
            let dout_i = &mut upper[0];
            mask_relu(dout_i, &cache.acts[i + 1]);
            for s in 0..n {
                let dpre = &dout_i[s * out_len..(s + 1) * out_len];
                for (b, row) in gt.conv_b[i].data_mut().iter_mut().zip(dpre.chunks_exact(cols)) {
                    *b += row.iter().copied().sum();
                }
                let col = &mut col[..rows * cols];
                im2col(gm, &cache.acts[i][s * in_len..(s + 1) * in_len], col);
                gemm_nt(dpre, col, gt.conv_w[i].data_mut(), oc, cols, rows);
                if i > 0 {
                    let dcol = &mut dcol[..rows * cols];
                    dcol.fill(T::zero());
                    gemm_tn(t.conv_w[i].data(), dpre, dcol, rows, oc, cols);
                    col2im(gm, dcol, &mut lower[i][s * in_len..(s + 1) * in_len]);
                }
            }
        }
        Ok(g)
    }
}
