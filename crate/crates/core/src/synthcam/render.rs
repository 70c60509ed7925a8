use super::{is_pupil_visible, SubjectParams, SynthConfig};
use crate::error::{Error, Result};
use crate::geometry::Angles;
use crate::image::EyeImage;

/// Pupil color before illumination scaling; darker than any iris tone.
pub const PUPIL_TONE: [u8; 3] = [14, 12, 12];

const SUPERSAMPLE: usize = 4;
/// Horizontal foreshortening never squeezes the opening below this fraction.
const MIN_FORESHORTENING: f64 = 0.1;

#[derive(Clone, Copy, PartialEq)]
enum Region {
    Skin,
    Sclera,
    Iris,
    Pupil,
}

struct Layout {
    cx: f64,
    cy: f64,
    /// Opening half-extents.
    a: f64,
    b: f64,
    /// Iris/pupil center and radii.
    ix: f64,
    iy: f64,
    iris_r: f64,
    pupil_r: f64,
    lid_y: f64,
}

impl Layout {
    fn new(subject: &SubjectParams, head: Angles, eye: Angles, w: f64, h: f64) -> Self {
        let cx = w / 2.0;
        let cy = h / 2.0;
        let a = subject.eye_opening_width * w / 2.0 * head.yaw.cos().max(MIN_FORESHORTENING);
        let b = subject.eye_opening_height * h / 2.0;
        // Normalized offset inside the opening; positive yaw looks toward image left.
        let mut ux = -subject.gaze_gain * eye.yaw.tan();
        let mut uy = -subject.gaze_gain * eye.pitch.tan();
        let r = ux.hypot(uy);
        if r > 1.0 {
            ux /= r;
            uy /= r;
        }
        let droop = subject.eyelid_coupling * (-eye.pitch).sin().max(0.0);
        Layout {
            cx,
            cy,
            a,
            b,
            ix: cx + ux * a,
            iy: cy + uy * b,
            iris_r: subject.iris_radius * h,
            pupil_r: subject.pupil_radius * h,
            lid_y: cy - b + droop * b,
        }
    }

    fn region(&self, x: f64, y: f64) -> Region {
        let ex = (x - self.cx) / self.a;
        let ey = (y - self.cy) / self.b;
        if ex * ex + ey * ey > 1.0 || y < self.lid_y {
            return Region::Skin;
        }
        let d2 = (x - self.ix).powi(2) + (y - self.iy).powi(2);
        if d2 <= self.pupil_r * self.pupil_r {
            Region::Pupil
        } else if d2 <= self.iris_r * self.iris_r {
            Region::Iris
        } else {
            Region::Sclera
        }
    }
}

fn luma(c: [u8; 3]) -> f64 {
    0.299 * c[0] as f64 + 0.587 * c[1] as f64 + 0.114 * c[2] as f64
}

/// Rasterizes one eye crop with 4x4 supersampling.
pub fn render_eye(
    subject: &SubjectParams,
    head: Angles,
    eye_in_head: Angles,
    illum: f64,
    cfg: &SynthConfig,
) -> Result<EyeImage> {
    if !is_pupil_visible(head, eye_in_head, cfg.visibility_limit_deg) {
        return Err(Error::Rejected(format!(
            "pupil not visible for head ({:.2}, {:.2}) rad, eye ({:.2}, {:.2}) rad",
            head.pitch, head.yaw, eye_in_head.pitch, eye_in_head.yaw
        )));
    }
    if !(illum.is_finite() && illum >= 0.0) {
        return Err(Error::InvalidInput(format!("illumination {illum} must be non-negative")));
    }
    let (w, h) = (cfg.image_w, cfg.image_h);
    let channels = cfg.channels();
    let layout = Layout::new(subject, head, eye_in_head, w as f64, h as f64);

    let tone = |r: Region| -> [f64; 3] {
        let c = match r {
            Region::Skin => subject.skin_tone,
            Region::Sclera => subject.sclera_tone,
            Region::Iris => subject.iris_tone,
            Region::Pupil => PUPIL_TONE,
        };
        if channels == 1 {
            [luma(c); 3]
        } else {
            c.map(f64::from)
        }
    };
    let tones = [
        tone(Region::Skin),
        tone(Region::Sclera),
        tone(Region::Iris),
        tone(Region::Pupil),
    ];

    let mut data = Vec::with_capacity(w * h * channels);
    let n = (SUPERSAMPLE * SUPERSAMPLE) as f64;
    for py in 0..h {
        for px in 0..w {
            let mut acc = [0.0f64; 3];
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let x = px as f64 + (sx as f64 + 0.5) / SUPERSAMPLE as f64;
                    let y = py as f64 + (sy as f64 + 0.5) / SUPERSAMPLE as f64;
                    let t = tones[layout.region(x, y) as usize];
                    for c in 0..3 {
                        acc[c] += t[c];
                    }
                }
            }
            for a in acc.iter().take(channels) {
                data.push((a / n * illum).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    EyeImage::from_raw(w, h, channels, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SynthConfig {
        SynthConfig::default()
    }

    /// Centroid of pixels rendered exactly at the pupil tone.
    fn pupil_centroid(img: &EyeImage) -> (f64, f64) {
        let level = luma(PUPIL_TONE).round() as u8;
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0.0);
        for y in 0..img.height() {
            for x in 0..img.width() {
                if img.pixel(x, y)[0] == level {
                    sx += x as f64 + 0.5;
                    sy += y as f64 + 0.5;
                    n += 1.0;
                }
            }
        }
        assert!(n > 0.0, "no pupil pixels");
        (sx / n, sy / n)
    }

    #[test]
    fn centered_pupil() {
        let img = render_eye(&SubjectParams::reference(), Angles::ZERO, Angles::ZERO, 1.0, &cfg()).unwrap();
        assert_eq!((img.width(), img.height(), img.channels()), (64, 40, 1));
        let (x, y) = pupil_centroid(&img);
        assert!((x - 32.0).abs() <= 0.5 && (y - 20.0).abs() <= 0.5, "({x}, {y})");
    }

    #[test]
    fn illumination_scales_linearly() {
        let s = SubjectParams::reference();
        let a = render_eye(&s, Angles::ZERO, Angles::ZERO, 1.0, &cfg()).unwrap();
        let b = render_eye(&s, Angles::ZERO, Angles::ZERO, 0.5, &cfg()).unwrap();
        let ratio = b.mean_intensity() / a.mean_intensity();
        assert!((ratio - 0.5).abs() < 0.01, "{ratio}");
    }

    #[test]
    fn yaw_mirror_symmetry() {
        let s = SubjectParams::reference();
        let l = render_eye(&s, Angles::ZERO, Angles::from_degrees(0.0, 20.0), 1.0, &cfg()).unwrap();
        let r = render_eye(&s, Angles::ZERO, Angles::from_degrees(0.0, -20.0), 1.0, &cfg()).unwrap();
        let (lx, ly) = pupil_centroid(&l);
        let (rx, ry) = pupil_centroid(&r);
        assert!(lx < 32.0 && rx > 32.0);
        assert!(((lx - 32.0) + (rx - 32.0)).abs() <= 1.0);
        assert!((ly - ry).abs() <= 1.0);
        assert_eq!(l, r.flipped_horizontally());
    }

    #[test]
    fn looking_down_lowers_lid_and_pupil() {
        let s = SubjectParams::reference();
        let level = |img: &EyeImage| img.pixel(32, 8)[0];
        let straight = render_eye(&s, Angles::ZERO, Angles::ZERO, 1.0, &cfg()).unwrap();
        let down = render_eye(&s, Angles::ZERO, Angles::from_degrees(-20.0, 0.0), 1.0, &cfg()).unwrap();
        assert_ne!(level(&straight), level(&down));
        assert!(pupil_centroid(&down).1 > pupil_centroid(&straight).1);
    }

    #[test]
    fn head_yaw_narrows_opening() {
        let s = SubjectParams::reference();
        let skin = luma(s.skin_tone).round() as u8;
        let width = |img: &EyeImage| (0..img.width()).filter(|&x| img.pixel(x, 20)[0] != skin).count();
        let front = render_eye(&s, Angles::ZERO, Angles::ZERO, 1.0, &cfg()).unwrap();
        let turned = render_eye(&s, Angles::from_degrees(0.0, 50.0), Angles::ZERO, 1.0, &cfg()).unwrap();
        assert!(width(&turned) < width(&front));
    }

    #[test]
    fn color_and_rejection() {
        let c = SynthConfig { color: true, ..cfg() };
        let img = render_eye(&SubjectParams::reference(), Angles::ZERO, Angles::ZERO, 1.0, &c).unwrap();
        assert_eq!(img.channels(), 3);
        assert_eq!(img.pixel(0, 0), &SubjectParams::reference().skin_tone);
        let err = render_eye(
            &SubjectParams::reference(),
            Angles::from_degrees(0.0, 60.0),
            Angles::from_degrees(0.0, 35.0),
            1.0,
            &cfg(),
        );
        assert!(matches!(err, Err(Error::Rejected(_))));
    }
}
