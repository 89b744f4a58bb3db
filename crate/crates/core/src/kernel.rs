//! Hann-windowed sinc fractional-delay kernel shared by the RIR simulator and
//! the dictionary columns.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

pub const DEFAULT_HALF_WIDTH: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FractionalDelayKernel {
    pub half_width: usize,
}

impl Default for FractionalDelayKernel {
    fn default() -> Self {
        FractionalDelayKernel {
            half_width: DEFAULT_HALF_WIDTH,
        }
    }
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = PI * x;
        px.sin() / px
    }
}

/// Samples of a delayed impulse: `taps[k]` belongs to sample index `start + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelTaps {
    pub start: i64,
    pub taps: Vec<f64>,
}

impl KernelTaps {
    pub fn end(&self) -> i64 {
        self.start + self.taps.len() as i64
    }
}

impl FractionalDelayKernel {
    pub fn new(half_width: usize) -> Self {
        assert!(half_width >= 1, "kernel half-width must be at least one tap");
        FractionalDelayKernel { half_width }
    }

    /// Kernel value at offset `x` samples from the impulse center.
    pub fn value(&self, x: f64) -> f64 {
        let hw = self.half_width as f64;
        if x.abs() >= hw {
            return 0.0;
        }
        let window = 0.5 * (1.0 + (PI * x / hw).cos());
        sinc(x) * window
    }

    /// Taps of an impulse at fractional `delay` samples scaled by `amplitude`.
    /// Integer delays produce a single unit tap.
    pub fn taps(&self, delay: f64, amplitude: f64) -> KernelTaps {
        let hw = self.half_width as f64;
        let rounded = delay.round();
        if (delay - rounded).abs() < 1e-12 {
            return KernelTaps {
                start: rounded as i64,
                taps: vec![amplitude],
            };
        }
        // endpoints at |x| = hw are zero, so the open interval is enough
        let first = (delay - hw).floor() as i64 + 1;
        let last = (delay + hw).ceil() as i64 - 1;
        let taps = (first..=last)
            .map(|n| amplitude * self.value(n as f64 - delay))
            .collect();
        KernelTaps { start: first, taps }
    }

    /// Adds an impulse at `delay` into `buf`, dropping taps outside the
    /// buffer. Returns `true` if non-zero taps fell past the buffer end.
    pub fn add_into(&self, buf: &mut [f64], delay: f64, amplitude: f64) -> bool {
        let k = self.taps(delay, amplitude);
        let len = buf.len() as i64;
        let mut truncated = false;
        for (i, &t) in k.taps.iter().enumerate() {
            let n = k.start + i as i64;
            if n < 0 {
                continue;
            }
            if n >= len {
                if t != 0.0 {
                    truncated = true;
                }
                continue;
            }
            buf[n as usize] += t;
        }
        truncated
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integer_delay_is_a_unit_tap() {
        let k = FractionalDelayKernel::default();
        let mut buf = vec![0.0; 40];
        k.add_into(&mut buf, 7.0, 2.5);
        assert_eq!(buf[7], 2.5);
        assert_eq!(buf.iter().filter(|v| **v != 0.0).count(), 1);
    }

    #[test]
    fn fractional_delay_is_symmetric_about_center() {
        let k = FractionalDelayKernel::default();
        let t = k.taps(20.5, 1.0);
        assert_eq!(t.taps.len(), 32);
        for i in 0..16 {
            assert!((t.taps[i] - t.taps[31 - i]).abs() < 1e-15);
        }
        // peak taps straddle the center
        assert_eq!(t.start + 15, 20);
        assert!(t.taps[15] > 0.6 && t.taps[16] > 0.6);
    }

    #[test]
    fn dc_gain_is_close_to_one() {
        let k = FractionalDelayKernel::default();
        for frac in [0.1, 0.25, 0.5, 0.77] {
            let t = k.taps(30.0 + frac, 1.0);
            let sum: f64 = t.taps.iter().sum();
            assert!((sum - 1.0).abs() < 0.02, "frac {frac}: {sum}");
        }
    }

    #[test]
    fn truncation_reported_only_past_the_end() {
        let k = FractionalDelayKernel::default();
        let mut buf = vec![0.0; 32];
        assert!(!k.add_into(&mut buf, 2.3, 1.0));
        assert!(k.add_into(&mut buf, 25.3, 1.0));
        let mut buf = vec![0.0; 64];
        assert!(!k.add_into(&mut buf, 25.3, 1.0));
    }
}
