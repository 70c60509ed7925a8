//! Branched gaze network.
//!
//! A five-stage convolutional trunk, one max pool and `fc6` are shared by all head-pose
//! clusters. Each cluster `k` owns `fc7_k` and `fc8_k`; a sample is routed through the
//! pair of its own cluster only, so neither the forward cost nor the set of touched
//! parameters depends on how many clusters exist.
//!
//! ```text
//! x -> conv1..conv5 (ReLU) -> pool -> fc6 (+ skip: gap(conv3) -> linear) -> ReLU
//!   -> fc7_k -> ReLU -> [ , head pitch, head yaw] -> fc8_k -> (pitch, yaw)
//! ```

mod forward;
mod io;
mod kernels;
mod tensor;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::clustering::ClusterId;
use crate::error::{Error, Result};
use crate::image::EyeImage;
use crate::rng::{derive_seed, stream_rng};
use crate::synthcam::hist_equalize_y;

pub use forward::ForwardCache;
pub use io::{partial_load, LoadReport, MODEL_FORMAT, MODEL_FORMAT_VERSION};
pub use tensor::{Scalar, Tensor};

use kernels::ConvGeom;

/// Number of network outputs: gaze pitch and yaw in radians.
pub const OUTPUT_DIM: usize = 2;
pub const CONV_STAGES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvSpec {
    pub kernel: usize,
    pub out_channels: usize,
    pub stride: usize,
    /// Zero padding on every border.
    pub padding: usize,
}

impl ConvSpec {
    /// Padding of `kernel / 2`, which keeps stride-1 layers size-preserving.
    pub const fn same(kernel: usize, out_channels: usize, stride: usize) -> Self {
        ConvSpec {
            kernel,
            out_channels,
            stride,
            padding: kernel / 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolSpec {
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    pub input_w: usize,
    pub input_h: usize,
    pub input_channels: usize,
    pub convs: Vec<ConvSpec>,
    pub pool: PoolSpec,
    pub fc6_dim: usize,
    pub fc7_dim: usize,
    /// Number of heads (head-pose clusters).
    pub k: usize,
    pub use_skip: bool,
    pub head_pose_inputs: bool,
    /// Equalize the luma histogram of every input image before it enters the network.
    pub hist_equalize: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig::reduced()
    }
}

impl NetConfig {
    /// Desk-scale network for 64x40 gray crops.
    pub fn reduced() -> Self {
        NetConfig {
            input_w: 64,
            input_h: 40,
            input_channels: 1,
            convs: vec![
                ConvSpec::same(7, 32, 2),
                ConvSpec::same(5, 64, 2),
                ConvSpec::same(3, 96, 1),
                ConvSpec::same(3, 96, 1),
                ConvSpec::same(3, 64, 1),
            ],
            pool: PoolSpec { kernel: 2, stride: 2 },
            fc6_dim: 128,
            fc7_dim: 64,
            k: 7,
            use_skip: true,
            head_pose_inputs: true,
            hist_equalize: false,
        }
    }

    /// AlexNet-sized variant for 134x80 color crops. Filter sizes follow the usual
    /// AlexNet layout with a single pool after conv5.
    pub fn alexnet_like() -> Self {
        NetConfig {
            input_w: 134,
            input_h: 80,
            input_channels: 3,
            convs: vec![
                ConvSpec::same(11, 96, 4),
                ConvSpec::same(5, 256, 2),
                ConvSpec::same(3, 384, 1),
                ConvSpec::same(3, 384, 1),
                ConvSpec::same(3, 256, 1),
            ],
            pool: PoolSpec { kernel: 3, stride: 2 },
            fc6_dim: 4096,
            fc7_dim: 4096,
            k: 7,
            use_skip: true,
            head_pose_inputs: true,
            hist_equalize: true,
        }
    }

    /// Small network for tests on 8x6 inputs.
    pub fn tiny() -> Self {
        NetConfig {
            input_w: 8,
            input_h: 6,
            input_channels: 1,
            convs: vec![
                ConvSpec::same(3, 3, 1),
                ConvSpec::same(3, 4, 2),
                ConvSpec::same(3, 4, 1),
                ConvSpec::same(1, 3, 1),
                ConvSpec::same(3, 3, 1),
            ],
            pool: PoolSpec { kernel: 2, stride: 1 },
            fc6_dim: 6,
            fc7_dim: 5,
            k: 3,
            use_skip: true,
            head_pose_inputs: true,
            hist_equalize: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.layout().map(|_| ())
    }

    /// Input size of `fc8`.
    pub fn fc8_in(&self) -> usize {
        self.fc7_dim + if self.head_pose_inputs { 2 } else { 0 }
    }

    pub(crate) fn layout(&self) -> Result<Layout> {
        let bad = |m: String| Err(Error::Config(m));
        if self.convs.len() != CONV_STAGES {
            return bad(format!("expected {CONV_STAGES} conv stages, got {}", self.convs.len()));
        }
        if self.input_w == 0 || self.input_h == 0 || self.input_channels == 0 {
            return bad("input dimensions must be positive".into());
        }
        if self.fc6_dim == 0 || self.fc7_dim == 0 || self.k == 0 {
            return bad("fc6_dim, fc7_dim and k must be positive".into());
        }
        let (mut c, mut h, mut w) = (self.input_channels, self.input_h, self.input_w);
        let mut convs = Vec::with_capacity(CONV_STAGES);
        for (i, s) in self.convs.iter().enumerate() {
            if s.out_channels == 0 || s.padding >= s.kernel.max(1) {
                return bad(format!("conv{}: need out_channels > 0 and padding < kernel", i + 1));
            }
            let Some(g) = ConvGeom::new(c, h, w, s.kernel, s.stride, s.padding) else {
                return bad(format!(
                    "conv{}: {}x{} kernel with stride {} does not fit a {h}x{w} input",
                    i + 1,
                    s.kernel,
                    s.kernel,
                    s.stride
                ));
            };
            convs.push(g);
            (c, h, w) = (s.out_channels, g.ho, g.wo);
        }
        let p = self.pool;
        if p.kernel == 0 || p.stride == 0 || p.kernel > h || p.kernel > w {
            return bad(format!("pool {}x{} /{} does not fit a {h}x{w} map", p.kernel, p.kernel, p.stride));
        }
        let (ph, pw) = ((h - p.kernel) / p.stride + 1, (w - p.kernel) / p.stride + 1);
        Ok(Layout {
            convs,
            conv_out: [c, h, w],
            pool_out: [c, ph, pw],
        })
    }

    /// `(name, shape)` of every tensor for a net with this configuration, trunk first.
    pub fn param_shapes(&self) -> Result<Vec<(String, Vec<usize>)>> {
        let l = self.layout()?;
        let mut out = Vec::new();
        for (i, (g, s)) in l.convs.iter().zip(&self.convs).enumerate() {
            out.push((format!("conv{}.weight", i + 1), vec![s.out_channels, g.c, s.kernel, s.kernel]));
            out.push((format!("conv{}.bias", i + 1), vec![s.out_channels]));
        }
        out.push(("fc6.weight".into(), vec![self.fc6_dim, l.flat()]));
        out.push(("fc6.bias".into(), vec![self.fc6_dim]));
        if self.use_skip {
            out.push(("skip.weight".into(), vec![self.fc6_dim, self.convs[2].out_channels]));
        }
        for k in 1..=self.k {
            out.push((format!("fc7_{k}.weight"), vec![self.fc7_dim, self.fc6_dim]));
            out.push((format!("fc7_{k}.bias"), vec![self.fc7_dim]));
            out.push((format!("fc8_{k}.weight"), vec![OUTPUT_DIM, self.fc8_in()]));
            out.push((format!("fc8_{k}.bias"), vec![OUTPUT_DIM]));
        }
        Ok(out)
    }

    /// Per-layer multiply-accumulate counts of one forward pass (trunk plus one head).
    pub fn layer_macs(&self) -> Result<Vec<(String, u64)>> {
        let l = self.layout()?;
        let mut out: Vec<(String, u64)> = l
            .convs
            .iter()
            .zip(&self.convs)
            .enumerate()
            .map(|(i, (g, s))| (format!("conv{}", i + 1), (g.rows() * g.cols() * s.out_channels) as u64))
            .collect();
        out.push(("fc6".into(), fc_macs(l.flat(), self.fc6_dim)));
        if self.use_skip {
            out.push(("skip".into(), fc_macs(self.convs[2].out_channels, self.fc6_dim)));
        }
        out.push(("fc7".into(), fc_macs(self.fc6_dim, self.fc7_dim)));
        out.push(("fc8".into(), fc_macs(self.fc8_in(), OUTPUT_DIM)));
        Ok(out)
    }

    pub fn flop_count(&self) -> Result<u64> {
        Ok(self.layer_macs()?.iter().map(|(_, m)| m).sum())
    }
}

/// MACs of a dense `m -> n` layer.
pub fn fc_macs(m: usize, n: usize) -> u64 {
    (m * n) as u64
}

#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub convs: Vec<ConvGeom>,
    /// `[c, h, w]` after conv5.
    pub conv_out: [usize; 3],
    /// `[c, h, w]` after the pool.
    pub pool_out: [usize; 3],
}

impl Layout {
    pub fn flat(&self) -> usize {
        self.pool_out.iter().product()
    }

    pub fn input_len(&self) -> usize {
        let g = &self.convs[0];
        g.c * g.h * g.w
    }
}

/// Shared parameters: conv1..conv5, fc6 and the optional skip projection.
#[derive(Debug, Clone, PartialEq)]
pub struct Trunk<T = f32> {
    pub conv_w: Vec<Tensor<T>>,
    pub conv_b: Vec<Tensor<T>>,
    pub fc6_w: Tensor<T>,
    pub fc6_b: Tensor<T>,
    pub skip_w: Option<Tensor<T>>,
}

/// Parameters owned by one cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct Head<T = f32> {
    pub fc7_w: Tensor<T>,
    pub fc7_b: Tensor<T>,
    pub fc8_w: Tensor<T>,
    pub fc8_b: Tensor<T>,
}

impl<T: Scalar> Trunk<T> {
    fn zeros_like(&self) -> Self {
        Trunk {
            conv_w: self.conv_w.iter().map(|t| Tensor::zeros(t.shape())).collect(),
            conv_b: self.conv_b.iter().map(|t| Tensor::zeros(t.shape())).collect(),
            fc6_w: Tensor::zeros(self.fc6_w.shape()),
            fc6_b: Tensor::zeros(self.fc6_b.shape()),
            skip_w: self.skip_w.as_ref().map(|t| Tensor::zeros(t.shape())),
        }
    }

    pub fn tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (i, (w, b)) in self.conv_w.iter().zip(&self.conv_b).enumerate() {
            out.push((format!("conv{}.weight", i + 1), w));
            out.push((format!("conv{}.bias", i + 1), b));
        }
        out.push(("fc6.weight".into(), &self.fc6_w));
        out.push(("fc6.bias".into(), &self.fc6_b));
        if let Some(s) = &self.skip_w {
            out.push(("skip.weight".into(), s));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        for (i, (w, b)) in self.conv_w.iter_mut().zip(self.conv_b.iter_mut()).enumerate() {
            out.push((format!("conv{}.weight", i + 1), w));
            out.push((format!("conv{}.bias", i + 1), b));
        }
        out.push(("fc6.weight".into(), &mut self.fc6_w));
        out.push(("fc6.bias".into(), &mut self.fc6_b));
        if let Some(s) = &mut self.skip_w {
            out.push(("skip.weight".into(), s));
        }
        out
    }
}

impl<T: Scalar> Head<T> {
    fn zeros_like(&self) -> Self {
        Head {
            fc7_w: Tensor::zeros(self.fc7_w.shape()),
            fc7_b: Tensor::zeros(self.fc7_b.shape()),
            fc8_w: Tensor::zeros(self.fc8_w.shape()),
            fc8_b: Tensor::zeros(self.fc8_b.shape()),
        }
    }

    pub fn tensors(&self, id: ClusterId) -> Vec<(String, &Tensor<T>)> {
        vec![
            (format!("fc7_{id}.weight"), &self.fc7_w),
            (format!("fc7_{id}.bias"), &self.fc7_b),
            (format!("fc8_{id}.weight"), &self.fc8_w),
            (format!("fc8_{id}.bias"), &self.fc8_b),
        ]
    }

    pub fn tensors_mut(&mut self, id: ClusterId) -> Vec<(String, &mut Tensor<T>)> {
        vec![
            (format!("fc7_{id}.weight"), &mut self.fc7_w),
            (format!("fc7_{id}.bias"), &mut self.fc7_b),
            (format!("fc8_{id}.weight"), &mut self.fc8_w),
            (format!("fc8_{id}.bias"), &mut self.fc8_b),
        ]
    }
}

/// Gradients of one backward pass. Only heads that received samples are present.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T = f32> {
    pub trunk: Trunk<T>,
    pub heads: Vec<(ClusterId, Head<T>)>,
}

impl<T: Scalar> Gradients<T> {
    pub fn tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = self.trunk.tensors();
        for (id, h) in &self.heads {
            out.extend(h.tensors(*id));
        }
        out
    }

    pub fn head(&self, id: ClusterId) -> Option<&Head<T>> {
        self.heads.iter().find(|(c, _)| *c == id).map(|(_, h)| h)
    }

    pub fn sum_squares(&self) -> f64 {
        self.tensors().iter().map(|(_, t)| t.sum_squares()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchedNet<T = f32> {
    config: NetConfig,
    layout_input_len: usize,
    pub trunk: Trunk<T>,
    pub heads: Vec<Head<T>>,
}

impl<T: Scalar> BranchedNet<T> {
    /// He-uniform weights (bound `sqrt(6 / fan_in)`), zero biases. Each tensor draws from
    /// its own stream keyed by name, so adding heads leaves existing tensors unchanged.
    pub fn new(config: NetConfig, seed: u64) -> Result<Self> {
        let mut net = BranchedNet::zeros(config)?;
        for (name, t) in net.tensors_mut() {
            if !name.ends_with(".weight") {
                continue;
            }
            let fan_in: usize = t.shape()[1..].iter().product();
            let bound = (6.0 / fan_in as f64).sqrt();
            let mut rng = stream_rng(derive_seed(seed, &name), 0);
            for v in t.data_mut() {
                *v = T::lit(rng.random_range(-bound..bound));
            }
        }
        Ok(net)
    }

    pub fn zeros(config: NetConfig) -> Result<Self> {
        let layout = config.layout()?;
        let shapes = config.param_shapes()?;
        let mut it = shapes.into_iter().map(|(_, s)| Tensor::zeros(&s));
        let mut next = || it.next().expect("param_shapes covers every tensor");
        let mut conv_w = Vec::new();
        let mut conv_b = Vec::new();
        for _ in 0..CONV_STAGES {
            conv_w.push(next());
            conv_b.push(next());
        }
        let fc6_w = next();
        let fc6_b = next();
        let skip_w = config.use_skip.then(&mut next);
        let heads = (0..config.k)
            .map(|_| Head {
                fc7_w: next(),
                fc7_b: next(),
                fc8_w: next(),
                fc8_b: next(),
            })
            .collect();
        Ok(BranchedNet {
            layout_input_len: layout.input_len(),
            config,
            trunk: Trunk {
                conv_w,
                conv_b,
                fc6_w,
                fc6_b,
                skip_w,
            },
            heads,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn k(&self) -> usize {
        self.heads.len()
    }

    pub fn input_len(&self) -> usize {
        self.layout_input_len
    }

    pub fn head(&self, id: ClusterId) -> Result<&Head<T>> {
        self.check_cluster(id)?;
        Ok(&self.heads[id.index()])
    }

    pub(crate) fn check_cluster(&self, id: ClusterId) -> Result<()> {
        if id.index() >= self.heads.len() {
            return Err(Error::InvalidInput(format!(
                "cluster {id} out of range 1..={}",
                self.heads.len()
            )));
        }
        Ok(())
    }

    /// Every named tensor, trunk first, then heads in cluster order.
    pub fn tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = self.trunk.tensors();
        for (i, h) in self.heads.iter().enumerate() {
            out.extend(h.tensors(ClusterId::from_index(i)));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = self.trunk.tensors_mut();
        for (i, h) in self.heads.iter_mut().enumerate() {
            out.extend(h.tensors_mut(ClusterId::from_index(i)));
        }
        out
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors().into_iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn flop_count(&self) -> u64 {
        self.config.flop_count().expect("validated at construction")
    }

    pub fn zero_gradients(&self, heads: &[ClusterId]) -> Gradients<T> {
        Gradients {
            trunk: self.trunk.zeros_like(),
            heads: heads.iter().map(|&id| (id, self.heads[id.index()].zeros_like())).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> BranchedNet<U> {
        let mut out = BranchedNet::<U>::zeros(self.config.clone()).expect("valid config");
        for ((_, dst), (_, src)) in out.tensors_mut().into_iter().zip(self.tensors()) {
            *dst = src.cast();
        }
        out
    }

    /// Applies `f(name, param, grad)` to every parameter that has a gradient.
    pub fn apply_gradients(&mut self, grads: &Gradients<T>, mut f: impl FnMut(&str, &mut Tensor<T>, &Tensor<T>)) {
        for ((name, p), (_, g)) in self.trunk.tensors_mut().into_iter().zip(grads.trunk.tensors()) {
            f(&name, p, g);
        }
        for (id, gh) in &grads.heads {
            let head = &mut self.heads[id.index()];
            for ((name, p), (_, g)) in head.tensors_mut(*id).into_iter().zip(gh.tensors(*id)) {
                f(&name, p, g);
            }
        }
    }
}

/// Converts an eye image into a `[c, h, w]` network input in `[-0.5, 0.5]`, equalizing
/// first if the configuration asks for it.
pub fn image_to_input(img: &EyeImage, config: &NetConfig) -> Result<Tensor<f32>> {
    if img.width() != config.input_w || img.height() != config.input_h || img.channels() != config.input_channels {
        return Err(Error::InvalidInput(format!(
            "image is {}x{}x{}, network expects {}x{}x{}",
            img.width(),
            img.height(),
            img.channels(),
            config.input_w,
            config.input_h,
            config.input_channels
        )));
    }
    let eq;
    let src = if config.hist_equalize {
        eq = hist_equalize_y(img);
        &eq
    } else {
        img
    };
    let (w, h, c) = (src.width(), src.height(), src.channels());
    let mut data = vec![0.0f32; w * h * c];
    for (i, px) in src.data().chunks_exact(c).enumerate() {
        for (ch, &v) in px.iter().enumerate() {
            data[ch * w * h + i] = v as f32 / 255.0 - 0.5;
        }
    }
    Tensor::new(vec![c, h, w], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        NetConfig::reduced().validate().unwrap();
        NetConfig::alexnet_like().validate().unwrap();
        NetConfig::tiny().validate().unwrap();
        let l = NetConfig::reduced().layout().unwrap();
        assert_eq!(l.conv_out, [64, 10, 16]);
        assert_eq!(l.pool_out, [64, 5, 8]);
    }

    #[test]
    fn unpadded_default_collapses() {
        let mut c = NetConfig::reduced();
        for s in &mut c.convs {
            s.padding = 0;
        }
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut four = NetConfig::reduced();
        four.convs.pop();
        assert!(four.validate().is_err());
    }

    #[test]
    fn default_flops_match_hand_tally() {
        // conv: out_h * out_w * out_c * in_c * k * k, with padded outputs
        // 20x32, 10x16, then 10x16 for conv3..conv5; pool 5x8.
        let conv1 = 20 * 32 * 32 * 1 * 49;
        let conv2 = 10 * 16 * 64 * 32 * 25;
        let conv3 = 10 * 16 * 96 * 64 * 9;
        let conv4 = 10 * 16 * 96 * 96 * 9;
        let conv5 = 10 * 16 * 64 * 96 * 9;
        let fc6 = 64 * 5 * 8 * 128;
        let skip = 96 * 128;
        let fc7 = 128 * 64;
        let fc8 = 66 * 2;
        let want: u64 = conv1 + conv2 + conv3 + conv4 + conv5 + fc6 + skip + fc7 + fc8;
        assert_eq!(NetConfig::reduced().flop_count().unwrap(), want);
        assert_eq!(want, 40_509_572);
    }

    #[test]
    fn flops_independent_of_k() {
        let mut a = NetConfig::reduced();
        a.k = 1;
        let mut b = a.clone();
        b.k = 7;
        assert_eq!(a.flop_count().unwrap(), b.flop_count().unwrap());
        assert_eq!(fc_macs(10, 3), 30);
    }

    #[test]
    fn names_are_unique_and_heads_share_shapes() {
        let net = BranchedNet::<f32>::new(NetConfig::tiny(), 1).unwrap();
        let names: Vec<String> = net.tensors().into_iter().map(|(n, _)| n).collect();
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
        let shapes = |i: usize| -> Vec<Vec<usize>> {
            net.heads[i].tensors(ClusterId::from_index(i)).iter().map(|(_, t)| t.shape().to_vec()).collect()
        };
        assert_eq!(shapes(0), shapes(2));
        assert!(names.contains(&"fc7_3.weight".to_string()));
        assert!(!names.contains(&"fc7_0.weight".to_string()));
        let expected: Vec<String> = NetConfig::tiny().param_shapes().unwrap().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, expected);
    }

    #[test]
    fn init_is_seeded_and_biases_zero() {
        let a = BranchedNet::<f32>::new(NetConfig::tiny(), 5).unwrap();
        let b = BranchedNet::<f32>::new(NetConfig::tiny(), 5).unwrap();
        let c = BranchedNet::<f32>::new(NetConfig::tiny(), 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        for (name, t) in a.tensors() {
            if name.ends_with(".bias") {
                assert!(t.data().iter().all(|&v| v == 0.0));
            } else {
                let bound = (6.0 / t.shape()[1..].iter().product::<usize>() as f32).sqrt();
                assert!(t.data().iter().all(|v| v.abs() <= bound));
            }
        }
        // More heads leave the existing ones untouched.
        let mut more = NetConfig::tiny();
        more.k = 5;
        let d = BranchedNet::<f32>::new(more, 5).unwrap();
        assert_eq!(d.heads[0], a.heads[0]);
        assert_eq!(d.trunk, a.trunk);
    }

    #[test]
    fn image_input_layout() {
        let mut cfg = NetConfig::tiny();
        cfg.input_w = 2;
        cfg.input_h = 1;
        cfg.input_channels = 3;
        let img = EyeImage::from_raw(2, 1, 3, vec![0, 51, 102, 153, 204, 255]).unwrap();
        let t = image_to_input(&img, &cfg).unwrap();
        assert_eq!(t.shape(), &[3, 1, 2]);
        let want = [0.0, 153.0, 51.0, 204.0, 102.0, 255.0].map(|v: f32| v / 255.0 - 0.5);
        assert_eq!(t.data(), &want);
        assert!(image_to_input(&EyeImage::new(3, 1, 3).unwrap(), &cfg).is_err());
    }
}
