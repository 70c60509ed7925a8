use crate::image::EyeImage;

fn equalization_map(levels: &[u8]) -> Option<[u8; 256]> {
    let mut hist = [0u64; 256];
    for &v in levels {
        hist[v as usize] += 1;
    }
    let n = levels.len() as f64;
    let first = hist.iter().position(|&c| c > 0)?;
    let cdf_min = hist[first] as f64 / n;
    if cdf_min >= 1.0 {
        return None;
    }
    let mut map = [0u8; 256];
    let mut cum = 0u64;
    for (v, &c) in hist.iter().enumerate() {
        cum += c;
        let cdf = cum as f64 / n;
        map[v] = (255.0 * (cdf - cdf_min) / (1.0 - cdf_min)).round().clamp(0.0, 255.0) as u8;
    }
    Some(map)
}

/// Histogram equalization of luma. RGB images go through full-range BT.601 YCbCr and
/// keep their chroma; gray images are equalized directly. Constant-luma images are
/// returned unchanged.
pub fn hist_equalize_y(img: &EyeImage) -> EyeImage {
    if img.channels() == 1 {
        return match equalization_map(img.data()) {
            None => img.clone(),
            Some(map) => {
                let data = img.data().iter().map(|&v| map[v as usize]).collect();
                EyeImage::from_raw(img.width(), img.height(), 1, data).expect("same dimensions")
            }
        };
    }
    let y: Vec<f64> = img
        .data()
        .chunks_exact(3)
        .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
        .collect();
    let quantized: Vec<u8> = y.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
    let Some(map) = equalization_map(&quantized) else {
        return img.clone();
    };
    // With Cb and Cr held fixed, each RGB channel moves by exactly the change in Y.
    let mut data = Vec::with_capacity(img.data().len());
    for ((p, &yf), &q) in img.data().chunks_exact(3).zip(&y).zip(&quantized) {
        let dy = map[q as usize] as f64 - yf;
        for &c in p {
            data.push((c as f64 + dy).round().clamp(0.0, 255.0) as u8);
        }
    }
    EyeImage::from_raw(img.width(), img.height(), 3, data).expect("same dimensions")
}
