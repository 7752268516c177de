//! Frame sampling, resizing, normalization and label encoding.

use crate::error::{Error, Result};
use crate::models::InputShape;
use crate::tensor::Tensor;

use super::FrameSequence;

/// `n` indices spread uniformly over `total` frames, `floor(i·total/n)`.
/// Short clips repeat frames rather than being rejected.
pub fn sample_frame_indices(total: usize, n: usize) -> Result<Vec<usize>> {
    if total == 0 {
        return Err(Error::EmptyClip("clip has no frames".into()));
    }
    if n == 0 {
        return Err(Error::usage("cannot sample zero frames"));
    }
    Ok((0..n).map(|i| i * total / n).collect())
}

/// Bilinear resize of one `[H, W, C]` frame with half-pixel centers. Source
/// coordinates are clamped to the frame, so edges replicate.
pub fn resize_bilinear(frame: &Tensor<f32>, out_h: usize, out_w: usize) -> Result<Tensor<f32>> {
    frame.expect_rank(3, "frame")?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::shape(format!("cannot resize to {out_h}×{out_w}")));
    }
    let d = frame.dims();
    let (h, w, c) = (d[0], d[1], d[2]);
    let src = frame.data();
    let axis = |dst: usize, n_in: usize, n_out: usize| -> (usize, usize, f32) {
        let scale = n_in as f64 / n_out as f64;
        let x = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
        let lo = x.floor() as usize;
        let hi = (lo + 1).min(n_in - 1);
        (lo, hi, (x - lo as f64) as f32)
    };
    let cols: Vec<_> = (0..out_w).map(|x| axis(x, w, out_w)).collect();
    let mut out = Vec::with_capacity(out_h * out_w * c);
    for y in 0..out_h {
        let (y0, y1, fy) = axis(y, h, out_h);
        for &(x0, x1, fx) in &cols {
            for ch in 0..c {
                let at = |yy: usize, xx: usize| src[(yy * w + xx) * c + ch];
                let top = at(y0, x0) + (at(y0, x1) - at(y0, x0)) * fx;
                let bottom = at(y1, x0) + (at(y1, x1) - at(y1, x0)) * fx;
                out.push(top + (bottom - top) * fy);
            }
        }
    }
    Tensor::new(vec![out_h, out_w, c], out)
}

/// Map 8-bit intensities in `[0, 255]` to `[0, 1]`.
pub fn normalize(frame: &Tensor<f32>) -> Tensor<f32> {
    frame.map(|v| v / 255.0)
}

pub fn one_hot(label: usize, classes: usize) -> Result<Tensor<f32>> {
    if label >= classes {
        return Err(Error::Label(format!("label {label} out of range for {classes} classes")));
    }
    let mut v = vec![0.0; classes];
    v[label] = 1.0;
    Tensor::from_vec(v)
}

/// Sample `input.frames` frames, resize each to `input.height × input.width`
/// and scale to `[0, 1]`: the exact transform every clip goes through before
/// reaching a model, in training and in streaming alike.
pub fn prepare_clip(seq: &FrameSequence, input: &InputShape) -> Result<Tensor<f32>> {
    let [t, h, w, c] = seq.dims();
    if c != input.channels {
        return Err(Error::shape(format!(
            "clip '{}' has {c} channels, model expects {}",
            seq.clip_id, input.channels
        )));
    }
    let indices = sample_frame_indices(t, input.frames)?;
    let frame_len = h * w * c;
    let mut out = Vec::with_capacity(input.frames * input.height * input.width * c);
    for i in indices {
        let raw: Vec<f32> = seq.frames[i * frame_len..(i + 1) * frame_len].iter().map(|&b| b as f32).collect();
        let frame = Tensor::new(vec![h, w, c], raw)?;
        let resized = if (h, w) == (input.height, input.width) {
            frame
        } else {
            resize_bilinear(&frame, input.height, input.width)?
        };
        out.extend_from_slice(normalize(&resized).data());
    }
    Tensor::new(input.dims().to_vec(), out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampling_examples() {
        assert_eq!(sample_frame_indices(25, 25).unwrap(), (0..25).collect::<Vec<_>>());
        assert_eq!(sample_frame_indices(125, 25).unwrap(), (0..25).map(|i| 5 * i).collect::<Vec<_>>());
        let short = sample_frame_indices(10, 25).unwrap();
        assert_eq!(short.len(), 25);
        for s in 0..10 {
            let reps = short.iter().filter(|&&i| i == s).count();
            assert!((2..=3).contains(&reps), "index {s} repeated {reps} times");
        }
        assert!(matches!(sample_frame_indices(0, 25), Err(Error::EmptyClip(_))));
    }

    #[test]
    fn two_by_two_to_one_pixel_is_the_mean() {
        let f = Tensor::new(vec![2, 2, 1], vec![1.0, 2.0, 3.0, 10.0]).unwrap();
        let r = resize_bilinear(&f, 1, 1).unwrap();
        assert!((r.data()[0] - 4.0).abs() < 1e-6);
    }

    #[test]
    fn same_size_resize_is_identity() {
        let f = Tensor::new(vec![3, 4, 3], (0..36).map(|v| (v * 7 % 255) as f32).collect()).unwrap();
        let r = resize_bilinear(&f, 3, 4).unwrap();
        assert!(r.max_abs_diff(&f).unwrap() <= 1e-6);
    }

    #[test]
    fn normalize_and_one_hot() {
        let f = Tensor::from_vec(vec![0.0, 255.0, 51.0]).unwrap();
        let n = normalize(&f);
        assert_eq!(n.data()[0], 0.0);
        assert_eq!(n.data()[1], 1.0);
        assert!((n.data()[2] - 0.2).abs() < 1e-7);
        assert_eq!(one_hot(0, 2).unwrap().data(), &[1.0, 0.0]);
        assert_eq!(one_hot(1, 2).unwrap().data(), &[0.0, 1.0]);
        assert!(matches!(one_hot(2, 2), Err(Error::Label(_))));
    }
}
