//! Two-class synthetic motion clips.
//!
//! Class 0 ("calm"): soft blobs glide on straight lines at low speed,
//! bouncing off the borders. Class 1 ("agitated"): blobs take large steps in
//! random directions and are repeatedly drawn into contact with each other.
//! Calm blobs never come closer than `calm_clearance` radii, so contact is
//! specific to the agitated class.
//! Each frame integrates blob positions over its exposure, so fast motion
//! smears.

use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{write_frame_container, DatasetManifest, FrameSequence, ManifestEntry, NONVIOLENT, VIOLENT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub clips_per_class: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub blobs: usize,
    pub blob_radius: f64,
    /// Pixels per frame.
    pub calm_speed: f64,
    pub agitated_speed: f64,
    /// Minimum centre distance between calm blobs, in blob radii.
    pub calm_clearance: f64,
    /// Amplitude of uniform per-pixel noise, in intensity levels.
    pub noise: f64,
    /// Sub-positions averaged along each blob's path during one frame
    /// (exposure blur); 1 renders sharp frames.
    pub exposure_samples: usize,
    pub fps: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            clips_per_class: 100,
            frames: 16,
            height: 24,
            width: 24,
            blobs: 2,
            blob_radius: 3.0,
            calm_speed: 0.35,
            agitated_speed: 6.0,
            calm_clearance: 3.0,
            noise: 3.0,
            exposure_samples: 4,
            fps: 30.0,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clips_per_class == 0 || self.frames == 0 || self.blobs == 0 || self.exposure_samples == 0 {
            return Err(Error::config("synthetic dataset needs at least one clip, frame, blob and exposure sample"));
        }
        let diameter = 2.0 * self.blob_radius;
        if !(self.blob_radius > 0.0) || diameter > self.height.min(self.width) as f64 {
            return Err(Error::config(format!(
                "blob radius {} does not fit a {}×{} frame",
                self.blob_radius, self.height, self.width
            )));
        }
        let finite = [self.calm_speed, self.agitated_speed, self.calm_clearance, self.noise, self.fps];
        if finite.iter().any(|v| !v.is_finite() || *v < 0.0) || self.fps == 0.0 {
            return Err(Error::config("speeds and noise must be non-negative, fps positive"));
        }
        Ok(())
    }
}

struct Blob {
    y: f64,
    x: f64,
    vy: f64,
    vx: f64,
    color: [f64; 3],
}

fn render(cfg: &SyntheticConfig, blobs: &[Blob], background: [f64; 3], rng: &mut ChaCha8Rng, out: &mut Vec<u8>) {
    let r2 = cfg.blob_radius * cfg.blob_radius;
    let k = cfg.exposure_samples;
    for py in 0..cfg.height {
        for px in 0..cfg.width {
            let mut pixel = background;
            for b in blobs {
                let mut w = 0.0;
                for s in 0..k {
                    let f = (s as f64 + 0.5) / k as f64;
                    let (dy, dx) = (py as f64 + 0.5 - (b.y + f * b.vy), px as f64 + 0.5 - (b.x + f * b.vx));
                    w += (-(dy * dy + dx * dx) / r2).exp();
                }
                w /= k as f64;
                for c in 0..3 {
                    pixel[c] += w * (b.color[c] - pixel[c]);
                }
            }
            for v in pixel {
                let n = if cfg.noise > 0.0 { rng.gen_range(-cfg.noise..=cfg.noise) } else { 0.0 };
                out.push((v + n).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
}

const MAX_SPAWN_TRIES: usize = 10_000;

fn step_all(blobs: &mut [Blob], r: f64, h: f64, w: f64) {
    for b in blobs {
        b.y += b.vy;
        b.x += b.vx;
        reflect(&mut b.y, &mut b.vy, r, h - r);
        reflect(&mut b.x, &mut b.vx, r, w - r);
    }
}

/// Whether linear calm motion keeps every pair of blobs `calm_clearance`
/// radii apart for the whole clip, sampled at each exposure sub-position.
fn keeps_clear(cfg: &SyntheticConfig, blobs: &[Blob]) -> bool {
    let (h, w, r) = (cfg.height as f64, cfg.width as f64, cfg.blob_radius);
    let min2 = (cfg.calm_clearance * r).powi(2);
    let mut sim: Vec<Blob> = blobs.iter().map(|b| Blob { color: [0.0; 3], ..*b }).collect();
    for _ in 0..cfg.frames {
        for s in 0..=cfg.exposure_samples {
            let f = s as f64 / cfg.exposure_samples as f64;
            for (i, a) in sim.iter().enumerate() {
                for b in &sim[i + 1..] {
                    let dy = (a.y + f * a.vy) - (b.y + f * b.vy);
                    let dx = (a.x + f * a.vx) - (b.x + f * b.vx);
                    if dy * dy + dx * dx < min2 {
                        return false;
                    }
                }
            }
        }
        step_all(&mut sim, r, h, w);
    }
    true
}

fn reflect(p: &mut f64, v: &mut f64, lo: f64, hi: f64) {
    if *p < lo {
        *p = 2.0 * lo - *p;
        *v = v.abs();
    }
    if *p > hi {
        *p = 2.0 * hi - *p;
        *v = -v.abs();
    }
    *p = p.clamp(lo, hi);
}

fn clip(cfg: &SyntheticConfig, label: usize, rng: &mut ChaCha8Rng) -> Result<Vec<u8>> {
    let (h, w, r) = (cfg.height as f64, cfg.width as f64, cfg.blob_radius);
    let background = {
        let base = rng.gen_range(20.0..60.0);
        [base + rng.gen_range(0.0..15.0), base, base + rng.gen_range(0.0..15.0)]
    };
    let spawn = |rng: &mut ChaCha8Rng| -> Vec<Blob> {
        (0..cfg.blobs)
            .map(|_| {
                let heading = rng.gen_range(0.0..TAU);
                Blob {
                    y: rng.gen_range(r..=h - r),
                    x: rng.gen_range(r..=w - r),
                    vy: cfg.calm_speed * heading.sin(),
                    vx: cfg.calm_speed * heading.cos(),
                    color: [rng.gen_range(150.0..255.0), rng.gen_range(150.0..255.0), rng.gen_range(150.0..255.0)],
                }
            })
            .collect()
    };
    let mut blobs = spawn(rng);
    if label == NONVIOLENT && cfg.blobs > 1 {
        let mut tries = 1;
        while !keeps_clear(cfg, &blobs) {
            if tries == MAX_SPAWN_TRIES {
                return Err(Error::config(format!(
                    "cannot keep {} calm blobs {} radii apart in a {}×{} frame",
                    cfg.blobs, cfg.calm_clearance, cfg.height, cfg.width
                )));
            }
            blobs = spawn(rng);
            tries += 1;
        }
    }
    let mut out = Vec::with_capacity(cfg.frames * cfg.height * cfg.width * 3);
    for t in 0..cfg.frames {
        if label == VIOLENT {
            let centroid = (
                blobs.iter().map(|b| b.y).sum::<f64>() / blobs.len() as f64,
                blobs.iter().map(|b| b.x).sum::<f64>() / blobs.len() as f64,
            );
            let contact = t % 4 == 3;
            for b in &mut blobs {
                let heading = rng.gen_range(0.0..TAU);
                let speed = cfg.agitated_speed * rng.gen_range(0.6..1.4);
                b.vy = speed * heading.sin();
                b.vx = speed * heading.cos();
                if contact {
                    b.vy += 0.6 * (centroid.0 - b.y);
                    b.vx += 0.6 * (centroid.1 - b.x);
                }
            }
        }
        render(cfg, &blobs, background, rng, &mut out);
        step_all(&mut blobs, r, h, w);
    }
    Ok(out)
}

/// Deterministic under `cfg.seed`: clip `i` of a class depends only on the
/// seed, the class and `i`.
pub fn generate_synthetic_dataset(cfg: &SyntheticConfig) -> Result<(DatasetManifest, Vec<FrameSequence>)> {
    cfg.validate()?;
    let mut entries = Vec::with_capacity(2 * cfg.clips_per_class);
    let mut seqs = Vec::with_capacity(2 * cfg.clips_per_class);
    for i in 0..cfg.clips_per_class {
        for (label, name) in [(NONVIOLENT, "calm"), (VIOLENT, "agitated")] {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(((label as u64) << 32) | i as u64);
            let clip_id = format!("{name}-{i:04}");
            let shape = [cfg.frames, cfg.height, cfg.width, 3];
            entries.push(ManifestEntry {
                clip_id: clip_id.clone(),
                path: format!("clips/{clip_id}.stnetfrm"),
                label,
                frames: cfg.frames,
                height: cfg.height,
                width: cfg.width,
            });
            seqs.push(FrameSequence::new(clip(cfg, label, &mut rng)?, shape, label, clip_id, cfg.fps)?);
        }
    }
    Ok((DatasetManifest::new(entries)?, seqs))
}

/// Write `manifest.jsonl` and one container per clip under `dir`.
pub fn write_dataset(dir: impl AsRef<Path>, manifest: &DatasetManifest, seqs: &[FrameSequence]) -> Result<()> {
    let dir = dir.as_ref();
    for (entry, seq) in manifest.entries.iter().zip(seqs) {
        let path = dir.join(&entry.path);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        write_frame_container(seq, path)?;
    }
    manifest.write(dir.join("manifest.jsonl"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bookkeeping_and_determinism() {
        let cfg = SyntheticConfig { clips_per_class: 20, frames: 4, ..SyntheticConfig::default() };
        let (m, seqs) = generate_synthetic_dataset(&cfg).unwrap();
        assert_eq!(m.len(), 40);
        assert_eq!(m.counts(), [20, 20]);
        let (_, again) = generate_synthetic_dataset(&cfg).unwrap();
        assert_eq!(seqs, again);
    }

    #[test]
    fn oversized_blob_is_config_error() {
        let cfg = SyntheticConfig { blob_radius: 13.0, ..SyntheticConfig::default() };
        assert!(matches!(generate_synthetic_dataset(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn impossible_clearance_is_config_error() {
        let cfg = SyntheticConfig { clips_per_class: 1, calm_clearance: 20.0, ..SyntheticConfig::default() };
        assert!(matches!(generate_synthetic_dataset(&cfg), Err(Error::Config(_))));
    }
}
