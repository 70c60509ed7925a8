//! Procedural synthetic eye data.
//!
//! Head pose and eye-in-head rotation are drawn independently and uniformly from
//! configurable boxes, and the gaze label is their composition. A sample is kept only if
//! the composed gaze lies within a visibility cone around the camera axis, which stands
//! in for eyelid/eye-region self-occlusion and pupil foreshortening. Rejection (not
//! clamping) makes the gaze prior at oblique head poses a truncated box, which is what
//! produces head-pose-dependent gaze distributions.
//!
//! Randomness: every sample slot `(subject, index)` owns one ChaCha8 stream derived from
//! the configured seed (see [`crate::rng`]), so serial and parallel generation agree
//! byte for byte.

mod equalize;
mod render;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{config_hash, Dataset, EyeSide, Sample};
use crate::error::{Error, Result};
use crate::geometry::{angular_error, compose_gaze_angles, Angles};
use crate::rng::{derive_seed, stream_rng};

pub use equalize::hist_equalize_y;
pub use render::{render_eye, PUPIL_TONE};

/// Attempts per sample slot before generation gives up.
const MAX_ATTEMPTS_PER_SAMPLE: usize = 100_000;
const PILOT_DRAWS: u64 = 4_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    /// Half-widths of the uniform pose boxes, degrees.
    pub head_pitch_range: f64,
    pub head_yaw_range: f64,
    pub eye_pitch_range: f64,
    pub eye_yaw_range: f64,
    /// Pupil visible iff the composed gaze is within this angle of the camera axis.
    pub visibility_limit_deg: f64,
    pub image_w: usize,
    pub image_h: usize,
    pub n_subjects: usize,
    pub samples_per_subject: usize,
    pub seed: u64,
    pub color: bool,
    /// Illumination gain range, drawn uniformly per sample.
    pub illum_range: [f64; 2],
    /// Standard deviation of additive Gaussian pixel noise (8-bit levels).
    pub noise_sigma: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            head_pitch_range: 60.0,
            head_yaw_range: 60.0,
            eye_pitch_range: 25.0,
            eye_yaw_range: 35.0,
            visibility_limit_deg: 75.0,
            image_w: 64,
            image_h: 40,
            n_subjects: 10,
            samples_per_subject: 100,
            seed: 0,
            color: false,
            illum_range: [0.5, 1.5],
            noise_sigma: 0.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("head_pitch_range", self.head_pitch_range, 90.0),
            ("head_yaw_range", self.head_yaw_range, 180.0),
            ("eye_pitch_range", self.eye_pitch_range, 90.0),
            ("eye_yaw_range", self.eye_yaw_range, 90.0),
        ];
        for (name, v, max) in ranges {
            if !(0.0..=max).contains(&v) {
                return Err(Error::Config(format!("{name} = {v} must lie in [0, {max}]")));
            }
        }
        if !(self.visibility_limit_deg > 0.0 && self.visibility_limit_deg <= 90.0) {
            return Err(Error::Config(format!(
                "visibility_limit_deg = {} must lie in (0, 90]",
                self.visibility_limit_deg
            )));
        }
        if self.image_w < 16 || self.image_h < 10 {
            return Err(Error::Config(format!(
                "image {}x{} is smaller than 16x10",
                self.image_w, self.image_h
            )));
        }
        let [lo, hi] = self.illum_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::Config(format!("bad illum_range [{lo}, {hi}]")));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Config("noise_sigma must be non-negative".into()));
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        if self.color {
            3
        } else {
            1
        }
    }
}

/// Appearance of one synthetic subject. Sizes are fractions of the image dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectParams {
    /// Fraction of image height.
    pub iris_radius: f64,
    /// Fraction of image height; smaller than `iris_radius`.
    pub pupil_radius: f64,
    /// Full opening width as a fraction of image width (before foreshortening).
    pub eye_opening_width: f64,
    /// Full opening height as a fraction of image height.
    pub eye_opening_height: f64,
    pub skin_tone: [u8; 3],
    pub sclera_tone: [u8; 3],
    pub iris_tone: [u8; 3],
    /// Upper-lid drop per unit of downward eye pitch sine.
    pub eyelid_coupling: f64,
    /// Pupil offset per unit tangent of eye-in-head angle, in opening half-extents.
    pub gaze_gain: f64,
}

impl SubjectParams {
    /// A plausible mid-range subject; used by tests and as a rendering reference.
    pub fn reference() -> Self {
        SubjectParams {
            iris_radius: 0.24,
            pupil_radius: 0.10,
            eye_opening_width: 0.8,
            eye_opening_height: 0.66,
            skin_tone: [196, 150, 128],
            sclera_tone: [232, 228, 224],
            iris_tone: [92, 70, 48],
            eyelid_coupling: 0.6,
            gaze_gain: 0.85,
        }
    }

    pub fn random(rng: &mut impl Rng) -> Self {
        let iris_radius = rng.random_range(0.20..0.27);
        let skin = rng.random_range(110.0..205.0);
        let tint = |base: f64, rng: &mut dyn rand::RngCore| -> [u8; 3] {
            let warm = rng.random_range(0.0..25.0);
            [
                (base + warm).clamp(0.0, 255.0) as u8,
                base.clamp(0.0, 255.0) as u8,
                (base - warm).clamp(0.0, 255.0) as u8,
            ]
        };
        let skin_tone = tint(skin, rng);
        let sclera_tone = tint(rng.random_range(205.0..245.0), rng);
        let iris_tone = tint(rng.random_range(45.0..125.0), rng);
        SubjectParams {
            iris_radius,
            pupil_radius: iris_radius * rng.random_range(0.35..0.5),
            eye_opening_width: rng.random_range(0.68..0.9),
            eye_opening_height: rng.random_range(0.55..0.75),
            skin_tone,
            sclera_tone,
            iris_tone,
            eyelid_coupling: rng.random_range(0.3..0.9),
            gaze_gain: rng.random_range(0.7..1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pupil_radius > 0.0 && self.pupil_radius < self.iris_radius) {
            return Err(Error::InvalidInput("pupil radius must be in (0, iris radius)".into()));
        }
        for v in [self.eye_opening_width, self.eye_opening_height] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::InvalidInput("opening fractions must be in (0, 1]".into()));
            }
        }
        Ok(())
    }
}

fn uniform_sym(rng: &mut impl Rng, half_deg: f64) -> f64 {
    if half_deg == 0.0 {
        0.0
    } else {
        rng.random_range(-half_deg..=half_deg).to_radians()
    }
}

/// Draws `(head, eye_in_head)` uniformly from the configured boxes. Four draws per call,
/// in the order head pitch, head yaw, eye pitch, eye yaw.
pub fn sample_pose_pair(cfg: &SynthConfig, rng: &mut impl Rng) -> (Angles, Angles) {
    let head = Angles {
        pitch: uniform_sym(rng, cfg.head_pitch_range),
        yaw: uniform_sym(rng, cfg.head_yaw_range),
    };
    let eye = Angles {
        pitch: uniform_sym(rng, cfg.eye_pitch_range),
        yaw: uniform_sym(rng, cfg.eye_yaw_range),
    };
    (head, eye)
}

/// The `index`-th pose pair of the stream selected by `cfg.seed`.
pub fn pose_pair_at(cfg: &SynthConfig, index: u64) -> (Angles, Angles) {
    let mut rng = stream_rng(derive_seed(cfg.seed, "pose-draws"), index);
    sample_pose_pair(cfg, &mut rng)
}

/// True iff the composed gaze lies within `limit_deg` of the camera axis.
pub fn is_pupil_visible(head: Angles, eye_in_head: Angles, limit_deg: f64) -> bool {
    angular_error(compose_gaze_angles(head, eye_in_head), Angles::ZERO) <= limit_deg
}

/// Per-subject appearance for `cfg.seed`.
pub fn subject_params(cfg: &SynthConfig, subject: usize) -> SubjectParams {
    let mut rng = stream_rng(derive_seed(cfg.seed, "subject"), subject as u64);
    SubjectParams::random(&mut rng)
}

pub fn subject_name(subject: usize) -> String {
    format!("s{subject:02}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationLog {
    pub samples: usize,
    pub draws: u64,
    pub rejected: u64,
    pub rejection_rate: f64,
    pub pilot_rejection_rate: f64,
    pub config_hash: String,
}

/// Generated sample together with the eye-in-head rotation that produced it.
struct Generated {
    sample: Sample,
    #[cfg_attr(not(test), allow(dead_code))]
    eye_in_head: Angles,
    image: crate::image::EyeImage,
    attempts: u64,
}

fn generate_slot(cfg: &SynthConfig, subject: usize, params: &SubjectParams, index: usize) -> Result<Generated> {
    let stream = ((subject as u64) << 32) | index as u64;
    let mut rng = stream_rng(derive_seed(cfg.seed, "sample"), stream);
    let mut attempts = 0u64;
    let (head, eye) = loop {
        attempts += 1;
        let (h, e) = sample_pose_pair(cfg, &mut rng);
        if is_pupil_visible(h, e, cfg.visibility_limit_deg) {
            break (h, e);
        }
        if attempts as usize >= MAX_ATTEMPTS_PER_SAMPLE {
            return Err(Error::Config(format!(
                "no visible pose after {attempts} draws for subject {subject} sample {index}"
            )));
        }
    };
    let [lo, hi] = cfg.illum_range;
    let illum = if lo == hi { lo } else { rng.random_range(lo..=hi) };
    let mut image = render_eye(params, head, eye, illum, cfg)?;
    if cfg.noise_sigma > 0.0 {
        let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
        for v in image.data_mut() {
            *v = (*v as f64 + noise.sample(&mut rng)).round().clamp(0.0, 255.0) as u8;
        }
    }
    let mut sample = Sample::new(
        format!("{}_{index:06}", subject_name(subject)),
        subject_name(subject),
        head,
        compose_gaze_angles(head, eye),
    );
    sample.eye = EyeSide::L;
    sample.illum = Some(illum);
    Ok(Generated {
        sample,
        eye_in_head: eye,
        image,
        attempts,
    })
}

/// Renders `n_subjects * samples_per_subject` visible samples.
pub fn generate_dataset(cfg: &SynthConfig) -> Result<(Dataset, GenerationLog)> {
    cfg.validate()?;

    let mut pilot_rng = stream_rng(derive_seed(cfg.seed, "pilot"), 0);
    let visible = (0..PILOT_DRAWS)
        .filter(|_| {
            let (h, e) = sample_pose_pair(cfg, &mut pilot_rng);
            is_pupil_visible(h, e, cfg.visibility_limit_deg)
        })
        .count();
    let pilot_rejection_rate = 1.0 - visible as f64 / PILOT_DRAWS as f64;
    if pilot_rejection_rate > 0.99 {
        return Err(Error::Config(format!(
            "{:.2}% of pose draws hide the pupil; widen visibility_limit_deg or narrow the pose ranges",
            pilot_rejection_rate * 100.0
        )));
    }

    let params: Vec<SubjectParams> = (0..cfg.n_subjects).map(|s| subject_params(cfg, s)).collect();
    let slots: Vec<(usize, usize)> = (0..cfg.n_subjects)
        .flat_map(|s| (0..cfg.samples_per_subject).map(move |i| (s, i)))
        .collect();
    let generated: Vec<Generated> = slots
        .par_iter()
        .map(|&(s, i)| generate_slot(cfg, s, &params[s], i))
        .collect::<Result<_>>()?;

    let draws: u64 = generated.iter().map(|g| g.attempts).sum();
    let samples = generated.len();
    let entries = generated.into_iter().map(|g| (g.sample, g.image)).collect();
    let hash = config_hash(cfg);
    let ds = Dataset::new(cfg.image_w, cfg.image_h, cfg.channels(), entries)?.with_generator_hash(hash.clone());
    let rejected = draws - samples as u64;
    let log = GenerationLog {
        samples,
        draws,
        rejected,
        rejection_rate: if draws == 0 { 0.0 } else { rejected as f64 / draws as f64 },
        pilot_rejection_rate,
        config_hash: hash,
    };
    Ok((ds, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Rotation;

    #[test]
    fn zero_ranges_give_zero_poses() {
        let cfg = SynthConfig {
            head_pitch_range: 0.0,
            head_yaw_range: 0.0,
            eye_pitch_range: 0.0,
            eye_yaw_range: 0.0,
            ..Default::default()
        };
        for i in 0..20 {
            assert_eq!(pose_pair_at(&cfg, i), (Angles::ZERO, Angles::ZERO));
        }
    }

    #[test]
    fn pose_draws_are_deterministic_and_cover_range() {
        let cfg = SynthConfig::default();
        assert_eq!(pose_pair_at(&cfg, 42), pose_pair_at(&cfg, 42));
        assert_ne!(pose_pair_at(&cfg, 42), pose_pair_at(&cfg, 43));
        let mut rng = stream_rng(3, 0);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for _ in 0..100_000 {
            let (h, e) = sample_pose_pair(&cfg, &mut rng);
            let y = h.yaw.to_degrees();
            lo = lo.min(y);
            hi = hi.max(y);
            assert!(h.pitch.to_degrees().abs() <= 60.0);
            assert!(e.pitch.to_degrees().abs() <= 25.0 && e.yaw.to_degrees().abs() <= 35.0);
        }
        assert!((-60.0..=-58.0).contains(&lo), "{lo}");
        assert!((58.0..=60.0).contains(&hi), "{hi}");
    }

    #[test]
    fn visibility_examples() {
        let d = Angles::from_degrees;
        assert!(is_pupil_visible(Angles::ZERO, Angles::ZERO, 75.0));
        assert!(!is_pupil_visible(d(0.0, 60.0), d(0.0, 35.0), 75.0));
        assert!(is_pupil_visible(d(0.0, 60.0), d(0.0, -35.0), 75.0));

        // Oracle: compose the yaw rotations by hand and measure the angle to the axis.
        let composite = |a: f64, b: f64| {
            let m = Rotation::yaw(a.to_radians()) * Rotation::yaw(b.to_radians());
            let f = m.apply([0.0, 0.0, -1.0]);
            (-f[2]).acos().to_degrees()
        };
        assert!((composite(60.0, 35.0) - 95.0).abs() < 1e-9);
        assert!((composite(60.0, -35.0) - 25.0).abs() < 1e-9);
    }

    fn tiny_cfg() -> SynthConfig {
        SynthConfig {
            image_w: 24,
            image_h: 16,
            n_subjects: 2,
            samples_per_subject: 15,
            seed: 9,
            ..Default::default()
        }
    }

    #[test]
    fn degenerate_config_yields_identical_samples() {
        let cfg = SynthConfig {
            head_pitch_range: 0.0,
            head_yaw_range: 0.0,
            eye_pitch_range: 0.0,
            eye_yaw_range: 0.0,
            n_subjects: 1,
            samples_per_subject: 10,
            illum_range: [1.0, 1.0],
            ..tiny_cfg()
        };
        let (ds, log) = generate_dataset(&cfg).unwrap();
        assert_eq!(ds.len(), 10);
        assert_eq!(log.rejected, 0);
        for (s, img) in ds.iter() {
            assert_eq!(s.gaze, Angles::ZERO);
            assert_eq!(img, &ds.images()[0]);
        }
    }

    #[test]
    fn generated_samples_are_visible_and_labels_consistent() {
        let cfg = tiny_cfg();
        let (ds, log) = generate_dataset(&cfg).unwrap();
        assert_eq!(ds.len(), 30);
        assert_eq!(log.draws, log.rejected + 30);
        for s in ds.samples() {
            assert!(angular_error(s.gaze, Angles::ZERO) <= cfg.visibility_limit_deg + 1e-9);
        }
        let params = subject_params(&cfg, 1);
        for i in 0..cfg.samples_per_subject {
            let g = generate_slot(&cfg, 1, &params, i).unwrap();
            let relabel = compose_gaze_angles(g.sample.head, g.eye_in_head);
            assert!(angular_error(relabel, g.sample.gaze) <= 1e-9);
            let stored = ds.samples().iter().find(|s| s.id == g.sample.id).unwrap();
            assert_eq!((stored.head, stored.gaze), (g.sample.head, g.sample.gaze));
        }
    }

    #[test]
    fn rejection_rate_matches_monte_carlo() {
        let cfg = SynthConfig {
            n_subjects: 10,
            samples_per_subject: 1000,
            image_w: 16,
            image_h: 10,
            seed: 21,
            ..Default::default()
        };
        let (_, log) = generate_dataset(&cfg).unwrap();
        // Independent oracle: explicit rotation matrices applied to the camera-facing axis.
        let mut rng = stream_rng(0xfeed, 7);
        let n = 200_000;
        let mut hidden = 0;
        for _ in 0..n {
            let mut u = |r: f64| rng.random_range(-r..=r).to_radians();
            let (hp, hy, ep, ey) = (u(60.0), u(60.0), u(25.0), u(35.0));
            let rx = |t: f64, v: [f64; 3]| [v[0], t.cos() * v[1] - t.sin() * v[2], t.sin() * v[1] + t.cos() * v[2]];
            let ry = |t: f64, v: [f64; 3]| [t.cos() * v[0] + t.sin() * v[2], v[1], -t.sin() * v[0] + t.cos() * v[2]];
            let f = ry(hy, rx(-hp, ry(ey, rx(-ep, [0.0, 0.0, -1.0]))));
            if (-f[2]).clamp(-1.0, 1.0).acos().to_degrees() > 75.0 {
                hidden += 1;
            }
        }
        let oracle = hidden as f64 / n as f64;
        assert!((log.rejection_rate - oracle).abs() < 0.02, "{} vs {oracle}", log.rejection_rate);
        assert!((log.pilot_rejection_rate - oracle).abs() < 0.03);
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = tiny_cfg();
        let (a, la) = generate_dataset(&cfg).unwrap();
        let (b, lb) = generate_dataset(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(la, lb);
        let other = SynthConfig { seed: 10, ..cfg };
        assert_ne!(generate_dataset(&other).unwrap().0, a);
    }

    #[test]
    fn pathological_config_is_rejected() {
        let cfg = SynthConfig {
            head_pitch_range: 0.0,
            head_yaw_range: 180.0,
            eye_pitch_range: 0.0,
            eye_yaw_range: 0.0,
            visibility_limit_deg: 0.5,
            ..tiny_cfg()
        };
        assert!(matches!(generate_dataset(&cfg), Err(Error::Config(_))));
        let bad = SynthConfig {
            image_w: 8,
            ..tiny_cfg()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn subject_params_are_valid() {
        let cfg = SynthConfig::default();
        for s in 0..20 {
            subject_params(&cfg, s).validate().unwrap();
        }
        SubjectParams::reference().validate().unwrap();
    }
}
