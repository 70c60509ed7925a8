#![allow(dead_code)]

use std::io::Write;
use std::sync::{Mutex, MutexGuard};

use gazebranch::nnet::{ConvSpec, NetConfig, PoolSpec};

static SERIAL: Mutex<()> = Mutex::new(());

/// Heavy tests take this lock so they neither compete for the CPU nor disturb timings.
pub fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

/// Writes straight to the process stdout so the line shows up under the test harness's
/// output capture.
pub fn report(criterion: &str, pass: bool, detail: &str) {
    let line = format!("[acceptance] {criterion}: {} ({detail})\n", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
}

/// 32x20 gray network used for the training experiments.
pub fn small_net(k: usize) -> NetConfig {
    NetConfig {
        input_w: 32,
        input_h: 20,
        input_channels: 1,
        convs: vec![
            ConvSpec::same(5, 8, 2),
            ConvSpec::same(3, 16, 2),
            ConvSpec::same(3, 16, 1),
            ConvSpec::same(3, 16, 1),
            ConvSpec::same(3, 16, 1),
        ],
        pool: PoolSpec { kernel: 2, stride: 2 },
        fc6_dim: 64,
        fc7_dim: 32,
        k,
        use_skip: true,
        head_pose_inputs: true,
        hist_equalize: false,
    }
}
