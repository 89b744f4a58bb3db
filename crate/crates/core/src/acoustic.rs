//! First-order room impulse response synthesis for a directive point source
//! surrounded by a uniform circular microphone array.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{mirror_source, Plane, SystemPose, Vec3};
use crate::kernel::FractionalDelayKernel;

pub const DEFAULT_SPEED_OF_SOUND: f64 = 343.0;

/// Propagation distances below this are clamped in the `1/d` spreading term.
/// Grid points on the array circle coincide with a microphone.
pub const MIN_SPREADING_DISTANCE: f64 = 0.01;

/// Spherical-spreading amplitude for a path of length `d`.
pub fn spreading(d: f64) -> f64 {
    1.0 / d.max(MIN_SPREADING_DISTANCE)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DirectivityKind {
    Omnidirectional,
    #[default]
    CardioidFamily,
}

/// Magnitude-only loudspeaker directivity `max(q + (1-q)cos θ, floor)`,
/// where `θ` is the angle between the emission direction and the speaker
/// axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Directivity {
    pub kind: DirectivityKind,
    pub q: f64,
    pub floor_gain: f64,
}

impl Default for Directivity {
    fn default() -> Self {
        Directivity {
            kind: DirectivityKind::CardioidFamily,
            q: 0.4,
            floor_gain: 0.05,
        }
    }
}

impl Directivity {
    pub fn omni() -> Self {
        Directivity {
            kind: DirectivityKind::Omnidirectional,
            q: 1.0,
            floor_gain: 0.0,
        }
    }

    pub fn cardioid(q: f64, floor_gain: f64) -> Result<Self> {
        let d = Directivity {
            kind: DirectivityKind::CardioidFamily,
            q,
            floor_gain,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.q) || !(self.floor_gain >= 0.0) {
            return Err(Error::invalid(format!(
                "directivity needs q in [0,1] and floor_gain >= 0, got q={} floor={}",
                self.q, self.floor_gain
            )));
        }
        Ok(())
    }

    fn gain_at_cos(&self, cos_theta: f64) -> f64 {
        match self.kind {
            DirectivityKind::Omnidirectional => 1.0,
            DirectivityKind::CardioidFamily => (self.q + (1.0 - self.q) * cos_theta).max(self.floor_gain),
        }
    }

    /// Gain toward azimuth `alpha` in the horizontal plane.
    pub fn gain(&self, alpha: f64, axis_angle: f64) -> f64 {
        self.gain_at_cos((alpha - axis_angle).cos())
    }

    /// Gain toward an arbitrary 3-D direction. Zero-length directions get the
    /// on-axis gain.
    pub fn gain_toward(&self, direction: &Vec3, axis_angle: f64) -> f64 {
        let n = direction.norm();
        if n == 0.0 {
            return self.gain_at_cos(1.0);
        }
        let axis = Vec3::new(axis_angle.cos(), axis_angle.sin(), 0.0);
        self.gain_at_cos((direction.dot(&axis) / n).clamp(-1.0, 1.0))
    }
}

/// Propagation constants and the fractional-delay kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcousticParams {
    pub sample_rate: f64,
    pub speed_of_sound: f64,
    pub kernel: FractionalDelayKernel,
}

impl Default for AcousticParams {
    fn default() -> Self {
        AcousticParams {
            sample_rate: 16_000.0,
            speed_of_sound: DEFAULT_SPEED_OF_SOUND,
            kernel: FractionalDelayKernel::default(),
        }
    }
}

impl AcousticParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate > 0.0 && self.speed_of_sound > 0.0) {
            return Err(Error::invalid(format!(
                "sample rate and speed of sound must be positive, got {} Hz, {} m/s",
                self.sample_rate, self.speed_of_sound
            )));
        }
        Ok(())
    }

    /// Delay in samples for a path of `distance` meters.
    pub fn delay_samples(&self, distance: f64) -> f64 {
        distance * self.sample_rate / self.speed_of_sound
    }
}

/// M-channel impulse response `h[n, m]`, stored channel-major so the backing
/// slice is already the stacked vector `[h⁽⁰⁾; …; h⁽ᴹ⁻¹⁾]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseResponseSet {
    data: Vec<f64>,
    n_samples: usize,
    n_channels: usize,
    pub sample_rate: f64,
    pub warnings: Vec<String>,
}

impl ImpulseResponseSet {
    pub fn zeros(n_samples: usize, n_channels: usize, sample_rate: f64) -> Result<Self> {
        if n_samples == 0 || n_channels < 3 {
            return Err(Error::invalid(format!(
                "impulse response needs N_h >= 1 and M >= 3, got {n_samples} x {n_channels}"
            )));
        }
        Ok(ImpulseResponseSet {
            data: vec![0.0; n_samples * n_channels],
            n_samples,
            n_channels,
            sample_rate,
            warnings: Vec::new(),
        })
    }

    /// Builds from a stacked vector of length `M·N_h`.
    pub fn from_stacked(data: Vec<f64>, n_samples: usize, sample_rate: f64) -> Result<Self> {
        if n_samples == 0 || !data.len().is_multiple_of(n_samples) || data.len() / n_samples < 3 {
            return Err(Error::invalid(format!(
                "stacked vector of length {} is not M·{n_samples} with M >= 3",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("impulse response contains non-finite samples"));
        }
        let n_channels = data.len() / n_samples;
        Ok(ImpulseResponseSet {
            data,
            n_samples,
            n_channels,
            sample_rate,
            warnings: Vec::new(),
        })
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    pub fn get(&self, n: usize, m: usize) -> f64 {
        self.data[m * self.n_samples + n]
    }

    pub fn channel(&self, m: usize) -> &[f64] {
        &self.data[m * self.n_samples..(m + 1) * self.n_samples]
    }

    pub fn channel_mut(&mut self, m: usize) -> &mut [f64] {
        let n = self.n_samples;
        &mut self.data[m * n..(m + 1) * n]
    }

    /// The stacked vector `h`.
    pub fn stack(&self) -> &[f64] {
        &self.data
    }

    pub fn into_stacked(self) -> Vec<f64> {
        self.data
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    fn check_shape(&self, other: &Self) -> Result<()> {
        if self.n_samples != other.n_samples || self.n_channels != other.n_channels {
            return Err(Error::invalid(format!(
                "shape mismatch: {}x{} vs {}x{}",
                self.n_samples, self.n_channels, other.n_samples, other.n_channels
            )));
        }
        Ok(())
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_shape(other)?;
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(&other.data) {
            *a -= b;
        }
        Ok(out)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_shape(other)?;
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        out.warnings.extend(other.warnings.iter().cloned());
        Ok(out)
    }

    /// Writes the response as CSV with a `(sample, amplitude)` column pair
    /// per channel.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let header: Vec<String> = (0..self.n_channels)
            .map(|m| format!("sample_ch{m},amplitude_ch{m}"))
            .collect();
        let mut body = header.join(",");
        body.push('\n');
        for n in 0..self.n_samples {
            let row: Vec<String> = (0..self.n_channels)
                .map(|m| format!("{n},{:e}", self.get(n, m)))
                .collect();
            body.push_str(&row.join(","));
            body.push('\n');
        }
        w.write_all(body.as_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }
}

fn render_source(
    out: &mut ImpulseResponseSet,
    position: &Vec3,
    weight: f64,
    pose: &SystemPose,
    params: &AcousticParams,
    label: &str,
) {
    let mut truncated = false;
    for m in 0..pose.mic_count {
        let d = (position - pose.mic_position(m)).norm();
        let delay = params.delay_samples(d);
        let amp = weight * spreading(d);
        truncated |= params.kernel.add_into(out.channel_mut(m), delay, amp);
    }
    if truncated {
        out.warnings.push(format!(
            "{label}: arrival at {:.3} m exceeds N_h = {} samples (kernel half-width {}), response truncated",
            position.norm(),
            out.n_samples,
            params.kernel.half_width
        ));
    }
}

/// Response of a single point source at `position` with overall `weight`
/// (reflection coefficient times directivity), no direct path.
pub fn simulate_point_source(
    position: &Vec3,
    weight: f64,
    pose: &SystemPose,
    params: &AcousticParams,
    n_samples: usize,
) -> Result<ImpulseResponseSet> {
    pose.validate()?;
    params.validate()?;
    let mut out = ImpulseResponseSet::zeros(n_samples, pose.mic_count, params.sample_rate)?;
    render_source(&mut out, position, weight, pose, params, "source");
    Ok(out)
}

/// Synthesizes the first-order RIR from the acoustically reflective planes.
/// Non-reflective planes are skipped.
pub fn simulate_rir(
    planes: &[Plane],
    pose: &SystemPose,
    directivity: &Directivity,
    params: &AcousticParams,
    n_samples: usize,
    include_direct: bool,
) -> Result<ImpulseResponseSet> {
    pose.validate()?;
    params.validate()?;
    directivity.validate()?;
    let mut out = ImpulseResponseSet::zeros(n_samples, pose.mic_count, params.sample_rate)?;
    let origin = pose.origin();
    for (i, plane) in planes.iter().enumerate() {
        if !plane.acoustic_reflective {
            continue;
        }
        let img = mirror_source(&origin, plane);
        let g = directivity.gain_toward(&(img.position - origin), pose.speaker_axis_angle);
        render_source(
            &mut out,
            &img.position,
            img.gain * g,
            pose,
            params,
            &format!("plane {i}"),
        );
    }
    if include_direct {
        add_direct_path(&mut out, pose, directivity, params, 1.0);
    }
    Ok(out)
}

fn add_direct_path(
    out: &mut ImpulseResponseSet,
    pose: &SystemPose,
    directivity: &Directivity,
    params: &AcousticParams,
    sign: f64,
) {
    for m in 0..pose.mic_count {
        let mic = pose.mic_position(m);
        let d = mic.norm();
        let g = directivity.gain_toward(&mic, pose.speaker_axis_angle);
        params
            .kernel
            .add_into(out.channel_mut(m), params.delay_samples(d), sign * g * spreading(d));
    }
}

/// Removes the loudspeaker-to-microphone direct path. Each channel's
/// synthesized direct-path template is scaled by its least-squares fit to
/// the channel and subtracted, so responses recorded without a direct path
/// pass through unchanged (as long as no reflection overlaps the template).
pub fn remove_direct_path(
    h: &ImpulseResponseSet,
    pose: &SystemPose,
    directivity: &Directivity,
    params: &AcousticParams,
) -> Result<ImpulseResponseSet> {
    if h.n_channels() != pose.mic_count {
        return Err(Error::invalid(format!(
            "response has {} channels but the array has {}",
            h.n_channels(),
            pose.mic_count
        )));
    }
    let mut template = ImpulseResponseSet::zeros(h.n_samples(), h.n_channels(), h.sample_rate)?;
    add_direct_path(&mut template, pose, directivity, params, 1.0);
    let mut out = h.clone();
    for m in 0..pose.mic_count {
        let t = template.channel(m);
        let tt: f64 = t.iter().map(|v| v * v).sum();
        if tt == 0.0 {
            continue;
        }
        let scale = h.channel(m).iter().zip(t).map(|(a, b)| a * b).sum::<f64>() / tt;
        for (y, v) in out.channel_mut(m).iter_mut().zip(t) {
            *y -= scale * v;
        }
    }
    Ok(out)
}

/// White Gaussian measurement noise at a target SNR on the stacked vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub snr_db: f64,
    pub seed: u64,
}

/// Adds `n ~ N(0, σ²)` with `σ² = ||h||² / (M·N_h·10^(snr/10))`. An infinite
/// SNR returns the input unchanged.
pub fn add_noise(h: &ImpulseResponseSet, spec: &NoiseSpec) -> Result<ImpulseResponseSet> {
    add_noise_referenced(h, spec, h.energy())
}

/// Like [`add_noise`] but with the SNR measured against `reference_energy`
/// instead of `||h||²`, e.g. the energy of the full recording including
/// the direct path when `h` has it removed.
pub fn add_noise_referenced(
    h: &ImpulseResponseSet,
    spec: &NoiseSpec,
    reference_energy: f64,
) -> Result<ImpulseResponseSet> {
    if spec.snr_db == f64::INFINITY {
        return Ok(h.clone());
    }
    if spec.snr_db.is_nan() || spec.snr_db == f64::NEG_INFINITY {
        return Err(Error::invalid(format!("unsupported SNR {}", spec.snr_db)));
    }
    if !(reference_energy > 0.0 && reference_energy.is_finite()) {
        return Err(Error::invalid(
            "cannot scale noise to a finite SNR on an all-zero response",
        ));
    }
    let len = h.stack().len() as f64;
    let sigma = (reference_energy / (len * 10f64.powf(spec.snr_db / 10.0))).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = h.clone();
    for v in out.data.iter_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *v += sigma * z;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn pose() -> SystemPose {
        SystemPose::new(0.05, 12).unwrap()
    }

    fn params() -> AcousticParams {
        AcousticParams::default()
    }

    fn peak_index(x: &[f64]) -> usize {
        x.iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .unwrap()
            .0
    }

    #[test]
    fn directivity_shape() {
        let d = Directivity::default();
        assert!((d.gain(0.0, 0.0) - 1.0).abs() < 1e-15);
        assert!((d.gain(PI / 2.0, 0.0) - 0.4).abs() < 1e-12);
        assert_eq!(d.gain(PI, 0.0), 0.05);
        let mut prev = f64::INFINITY;
        for k in 0..=36 {
            let g = d.gain(k as f64 * PI / 36.0, 0.0);
            assert!(g <= prev);
            prev = g;
        }
        assert_eq!(Directivity::omni().gain(2.0, 0.0), 1.0);
        let down = Vec3::new(0.0, 0.0, -1.0);
        assert!((d.gain_toward(&down, 0.0) - 0.4).abs() < 1e-12);
        assert!(Directivity::cardioid(1.5, 0.0).is_err());
    }

    #[test]
    fn single_wall_small_array() {
        // R_a -> 0: every channel sees the image at exactly 1 m
        let pose = SystemPose::new(1e-6, 12).unwrap();
        let wall = Plane::wall(0.0, 0.5).unwrap();
        let h = simulate_rir(&[wall], &pose, &Directivity::omni(), &params(), 128, false).unwrap();
        let expected_delay = 16_000.0 / 343.0;
        for m in 0..12 {
            let ch = h.channel(m);
            let peak = peak_index(ch);
            assert!((peak as f64 - expected_delay).abs() <= 0.5);
            // band-limited impulse: taps sum to the amplitude 1/1.0
            let sum: f64 = ch.iter().sum();
            assert!((sum - 1.0).abs() < 0.02, "channel {m}: {sum}");
        }
    }

    #[test]
    fn no_planes_is_silent() {
        let h = simulate_rir(&[], &pose(), &Directivity::default(), &params(), 64, false).unwrap();
        assert!(h.stack().iter().all(|v| *v == 0.0));
        assert_eq!(h.stack().len(), 12 * 64);
    }

    #[test]
    fn floor_arrives_simultaneously() {
        let floor = Plane::floor(0.3).unwrap();
        let h = simulate_rir(&[floor], &pose(), &Directivity::omni(), &params(), 256, false).unwrap();
        let d = (0.05f64.powi(2) + 0.6f64.powi(2)).sqrt();
        assert!((d - 0.60208).abs() < 1e-5);
        let expected = (d / 343.0 * 16_000.0).round() as usize;
        assert_eq!(expected, 28);
        for m in 0..12 {
            assert_eq!(peak_index(h.channel(m)), expected);
            assert!((h.channel(m)[expected] - h.channel(0)[expected]).abs() < 1e-12);
        }
    }

    #[test]
    fn truncation_warning() {
        let wall = Plane::wall(0.0, 2.0).unwrap();
        let h = simulate_rir(
            std::slice::from_ref(&wall),
            &pose(),
            &Directivity::omni(),
            &params(),
            200,
            false,
        )
        .unwrap();
        assert!(!h.warnings.is_empty());
        let h = simulate_rir(&[wall], &pose(), &Directivity::omni(), &params(), 256, false).unwrap();
        assert!(h.warnings.is_empty());
    }

    #[test]
    fn linear_in_planes() {
        let p1 = Plane::wall(0.3, 0.5).unwrap();
        let p2 = Plane::floor(0.4).unwrap();
        let d = Directivity::default();
        let both = simulate_rir(&[p1.clone(), p2.clone()], &pose(), &d, &params(), 256, false).unwrap();
        let a = simulate_rir(&[p1], &pose(), &d, &params(), 256, false).unwrap();
        let b = simulate_rir(&[p2], &pose(), &d, &params(), 256, false).unwrap();
        let sum = a.add(&b).unwrap();
        for (x, y) in both.stack().iter().zip(sum.stack()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn channel_symmetry_about_wall_azimuth() {
        // wall along mic 2's direction: channel 2+k mirrors channel 2-k
        let pose = pose();
        let wall = Plane::wall(pose.mic_angle(2), 0.6).unwrap();
        let h = simulate_rir(&[wall], &pose, &Directivity::omni(), &params(), 256, false).unwrap();
        for k in 1..6 {
            let a = h.channel((2 + k) % 12);
            let b = h.channel((2 + 12 - k) % 12);
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn doubling_distance_quarters_energy() {
        let tiny = SystemPose::new(1e-6, 12).unwrap();
        let near = simulate_rir(
            &[Plane::wall(0.0, 0.4).unwrap()],
            &tiny,
            &Directivity::omni(),
            &params(),
            256,
            false,
        )
        .unwrap()
        .energy();
        let far = simulate_rir(
            &[Plane::wall(0.0, 0.8).unwrap()],
            &tiny,
            &Directivity::omni(),
            &params(),
            256,
            false,
        )
        .unwrap()
        .energy();
        // windowed-sinc energy varies slightly with the fractional delay
        assert!((near / far - 4.0).abs() < 4.0 * 0.05, "ratio {}", near / far);
    }

    #[test]
    fn direct_path_removal() {
        let d = Directivity::default();
        let p = params();
        let wall = Plane::wall(1.0, 0.7).unwrap();
        let without = simulate_rir(std::slice::from_ref(&wall), &pose(), &d, &p, 256, false).unwrap();
        let untouched = remove_direct_path(&without, &pose(), &d, &p).unwrap();
        assert_eq!(untouched, without);
        let direct_only = simulate_rir(&[], &pose(), &d, &p, 256, true).unwrap();
        let residual = remove_direct_path(&direct_only, &pose(), &d, &p).unwrap();
        assert!(residual.energy() < 1e-10 * direct_only.energy());

        let with = simulate_rir(&[wall], &pose(), &d, &p, 256, true).unwrap();
        let cleaned_with = remove_direct_path(&with, &pose(), &d, &p).unwrap();
        let diff = cleaned_with.sub(&without).unwrap();
        assert!(diff.energy() < 1e-10 * without.energy());
    }

    #[test]
    fn noise_levels_and_determinism() {
        let wall = Plane::wall(0.0, 0.5).unwrap();
        let h = simulate_rir(&[wall], &pose(), &Directivity::omni(), &params(), 1024, false).unwrap();
        let clean = add_noise(
            &h,
            &NoiseSpec {
                snr_db: f64::INFINITY,
                seed: 1,
            },
        )
        .unwrap();
        assert_eq!(clean, h);

        let spec = NoiseSpec { snr_db: 0.0, seed: 42 };
        let noisy = add_noise(&h, &spec).unwrap();
        let noise = noisy.sub(&h).unwrap().energy();
        assert!((noise / h.energy() - 1.0).abs() < 0.05);
        assert_eq!(noisy, add_noise(&h, &spec).unwrap());

        for snr in [-9.0, 0.0, 9.0, 21.0] {
            let n = add_noise(&h, &NoiseSpec { snr_db: snr, seed: 7 }).unwrap();
            let measured = 10.0 * (h.energy() / n.sub(&h).unwrap().energy()).log10();
            assert!((measured - snr).abs() < 0.5, "snr {snr}: {measured}");
        }

        let silent = ImpulseResponseSet::zeros(16, 12, 16_000.0).unwrap();
        assert!(add_noise(&silent, &spec).is_err());
    }

    #[test]
    fn csv_export_layout() {
        let h = simulate_rir(
            &[Plane::wall(0.0, 0.5).unwrap()],
            &pose(),
            &Directivity::omni(),
            &params(),
            64,
            false,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rir.csv");
        h.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 65);
        assert_eq!(lines[0].split(',').count(), 24);
        assert!(lines[0].starts_with("sample_ch0,amplitude_ch0,sample_ch1"));
        let row: Vec<f64> = lines[47].split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(row[0], 46.0);
        assert!((row[1] - h.get(46, 0)).abs() < 1e-12);
    }
}
