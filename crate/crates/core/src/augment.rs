//! Seeded landmark augmentation: rigid rotation, translation, horizontal
//! flip, temporal rescaling and frame fusion.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::LandmarkSequence;
use crate::error::{invalid, Result};
use crate::rng::rng_from_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    Average,
    Weighted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentPolicy {
    pub flip_prob: f64,
    pub rotation_prob: f64,
    pub translation_prob: f64,
    pub temporal_scale_prob: f64,
    /// Per-frame probability.
    pub fusion_prob: f64,
    pub max_rotation_deg: f64,
    /// Fraction of the per-sequence coordinate range.
    pub max_translation: f64,
    pub fusion_mode: FusionMode,
    pub fusion_weight_range: (f64, f64),
    pub scale_range: (f64, f64),
    /// Left/right keypoint swap applied by the flip; must be an involution.
    pub flip_permutation: Option<Vec<usize>>,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            flip_prob: 0.5,
            rotation_prob: 0.3,
            translation_prob: 0.0,
            temporal_scale_prob: 0.0,
            fusion_prob: 0.2,
            max_rotation_deg: 13.0,
            max_translation: 0.05,
            fusion_mode: FusionMode::Weighted,
            fusion_weight_range: (0.2, 0.8),
            scale_range: (0.8, 1.2),
            flip_permutation: None,
        }
    }
}

impl AugmentPolicy {
    /// Every op disabled.
    pub fn identity() -> Self {
        Self {
            flip_prob: 0.0,
            rotation_prob: 0.0,
            translation_prob: 0.0,
            temporal_scale_prob: 0.0,
            fusion_prob: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        for (name, p) in [
            ("flip_prob", self.flip_prob),
            ("rotation_prob", self.rotation_prob),
            ("translation_prob", self.translation_prob),
            ("temporal_scale_prob", self.temporal_scale_prob),
            ("fusion_prob", self.fusion_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                errs.push(format!("augment.{name} must be in [0, 1], got {p}"));
            }
        }
        if !(self.max_rotation_deg >= 0.0) {
            errs.push(format!("augment.max_rotation_deg must be >= 0, got {}", self.max_rotation_deg));
        }
        if !(self.max_translation >= 0.0) {
            errs.push(format!("augment.max_translation must be >= 0, got {}", self.max_translation));
        }
        let (lo, hi) = self.fusion_weight_range;
        if !(0.0 < lo && lo <= hi && hi < 1.0) {
            errs.push(format!("augment.fusion_weight_range must lie inside (0, 1), got ({lo}, {hi})"));
        }
        let (lo, hi) = self.scale_range;
        if !(0.0 < lo && lo <= 1.0 && 1.0 <= hi) {
            errs.push(format!("augment.scale_range must be positive and contain 1, got ({lo}, {hi})"));
        }
        if let Some(p) = &self.flip_permutation {
            if let Err(e) = check_involution(p) {
                errs.push(format!("augment.flip_permutation: {e}"));
            }
        }
        errs
    }
}

fn check_involution(perm: &[usize]) -> Result<()> {
    for (i, &j) in perm.iter().enumerate() {
        if j >= perm.len() || perm[j] != i {
            return invalid(format!("not an involution at index {i}"));
        }
    }
    Ok(())
}

fn require_xy(seq: &LandmarkSequence, op: &str) -> Result<()> {
    if seq.coords() < 2 {
        return invalid(format!("{op} needs x and y channels, sequence has C={}", seq.coords()));
    }
    Ok(())
}

fn centroid(seq: &LandmarkSequence) -> (f64, f64) {
    let c = seq.coords();
    let (mut sx, mut sy) = (0.0, 0.0);
    for p in seq.data().chunks_exact(c) {
        sx += p[0];
        sy += p[1];
    }
    let n = (seq.frames() * seq.keypoints()) as f64;
    (sx / n, sy / n)
}

fn map_xy(seq: &LandmarkSequence, f: impl Fn(f64, f64) -> (f64, f64)) -> Result<LandmarkSequence> {
    let c = seq.coords();
    let mut data = seq.data().to_vec();
    for p in data.chunks_exact_mut(c) {
        (p[0], p[1]) = f(p[0], p[1]);
    }
    seq.with_data(seq.frames(), data)
}

/// Rotates every (x, y) pair by `angle` radians about the whole-sequence
/// centroid.
pub fn rotate(seq: &LandmarkSequence, angle: f64) -> Result<LandmarkSequence> {
    require_xy(seq, "rotate")?;
    if angle == 0.0 {
        return Ok(seq.clone());
    }
    let (cx, cy) = centroid(seq);
    let (s, c) = angle.sin_cos();
    map_xy(seq, |x, y| {
        let (dx, dy) = (x - cx, y - cy);
        (cx + c * dx - s * dy, cy + s * dx + c * dy)
    })
}

pub fn translate(seq: &LandmarkSequence, dx: f64, dy: f64) -> Result<LandmarkSequence> {
    require_xy(seq, "translate")?;
    map_xy(seq, |x, y| (x + dx, y + dy))
}

/// Mirrors x about the sequence centroid, then swaps keypoints by `perm`.
pub fn hflip(seq: &LandmarkSequence, perm: Option<&[usize]>) -> Result<LandmarkSequence> {
    require_xy(seq, "hflip")?;
    if let Some(p) = perm {
        if p.len() != seq.keypoints() {
            return invalid(format!("flip permutation has {} entries for {} keypoints", p.len(), seq.keypoints()));
        }
        check_involution(p)?;
    }
    let (cx, _) = centroid(seq);
    let mirrored = map_xy(seq, |x, y| (2.0 * cx - x, y))?;
    let Some(p) = perm else { return Ok(mirrored) };
    let (f, c) = (seq.keypoints(), seq.coords());
    let src = mirrored.data();
    let mut data = vec![0.0; src.len()];
    for t in 0..seq.frames() {
        for k in 0..f {
            let to = (t * f + k) * c;
            let from = (t * f + p[k]) * c;
            data[to..to + c].copy_from_slice(&src[from..from + c]);
        }
    }
    seq.with_data(seq.frames(), data)
}

/// Linear resampling to `round(T * factor)` frames with both endpoints
/// kept.
pub fn temporal_scale(seq: &LandmarkSequence, factor: f64) -> Result<LandmarkSequence> {
    if !(factor > 0.0) || !factor.is_finite() {
        return invalid(format!("temporal scale factor must be positive, got {factor}"));
    }
    let t = seq.frames();
    let t_new = (t as f64 * factor).round() as usize;
    if t_new == 0 {
        return invalid(format!("temporal scale {factor} turns {t} frames into none"));
    }
    let w = seq.width();
    let mut data = Vec::with_capacity(t_new * w);
    for j in 0..t_new {
        let u = if t_new == 1 {
            0.0
        } else {
            j as f64 * (t - 1) as f64 / (t_new - 1) as f64
        };
        let i0 = (u.floor() as usize).min(t - 1);
        let i1 = (i0 + 1).min(t - 1);
        let a = u - i0 as f64;
        let (f0, f1) = (seq.frame(i0), seq.frame(i1));
        data.extend(f0.iter().zip(f1).map(|(x0, x1)| if a == 0.0 { *x0 } else { x0 + a * (x1 - x0) }));
    }
    seq.with_data(t_new, data)
}

/// Replaces frame `t` by `w·frame_t + (1−w)·frame_{t+1}` at every position,
/// reading from the unmodified input. Average mode uses `w = 0.5`.
pub fn frame_fuse(seq: &LandmarkSequence, positions: &[usize], mode: FusionMode, weight: f64) -> Result<LandmarkSequence> {
    let w = match mode {
        FusionMode::Average => 0.5,
        FusionMode::Weighted => weight,
    };
    if !(w > 0.0 && w < 1.0) {
        return invalid(format!("fusion weight must be in (0, 1), got {w}"));
    }
    let t = seq.frames();
    let width = seq.width();
    let mut data = seq.data().to_vec();
    for &p in positions {
        if p + 1 >= t {
            return invalid(format!("fusion position {p} out of range for {t} frames"));
        }
        let (cur, next) = (seq.frame(p), seq.frame(p + 1));
        for (k, out) in data[p * width..(p + 1) * width].iter_mut().enumerate() {
            *out = next[k] + w * (cur[k] - next[k]);
        }
    }
    seq.with_data(t, data)
}

/// What [`apply_policy_traced`] did.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AugmentTrace {
    pub flipped: bool,
    pub rotation: Option<f64>,
    pub translation: Option<(f64, f64)>,
    pub temporal_scale: Option<f64>,
    pub fused_positions: Vec<usize>,
    /// Positions eligible for fusion.
    pub fusion_candidates: usize,
}

pub fn apply_policy(seq: &LandmarkSequence, policy: &AugmentPolicy, seed: u64) -> Result<LandmarkSequence> {
    apply_policy_traced(seq, policy, seed).map(|(s, _)| s)
}

/// Samples ops in the order flip, rotation, translation, temporal scale,
/// fusion. Every draw is made whether or not its op fires, so the output is
/// a pure function of `(seq, policy, seed)`.
pub fn apply_policy_traced(seq: &LandmarkSequence, policy: &AugmentPolicy, seed: u64) -> Result<(LandmarkSequence, AugmentTrace)> {
    let errs = policy.validate();
    if !errs.is_empty() {
        return invalid(errs.join("; "));
    }
    let mut rng = rng_from_seed(seed);
    let mut trace = AugmentTrace::default();
    let mut out = seq.clone();

    let fire = rng.random::<f64>() < policy.flip_prob;
    if fire {
        out = hflip(&out, policy.flip_permutation.as_deref())?;
        trace.flipped = true;
    }

    let max = policy.max_rotation_deg.to_radians();
    let angle = rng.random_range(-1.0..=1.0) * max;
    if rng.random::<f64>() < policy.rotation_prob {
        out = rotate(&out, angle)?;
        trace.rotation = Some(angle);
    }

    let (ux, uy): (f64, f64) = (rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0));
    if rng.random::<f64>() < policy.translation_prob {
        let (rx, ry) = xy_range(&out);
        let (dx, dy) = (ux * policy.max_translation * rx, uy * policy.max_translation * ry);
        out = translate(&out, dx, dy)?;
        trace.translation = Some((dx, dy));
    }

    let (lo, hi) = policy.scale_range;
    let factor = rng.random_range(lo..=hi);
    if rng.random::<f64>() < policy.temporal_scale_prob {
        out = temporal_scale(&out, factor)?;
        trace.temporal_scale = Some(factor);
    }

    let (wlo, whi) = policy.fusion_weight_range;
    let weight = rng.random_range(wlo..=whi);
    trace.fusion_candidates = out.frames().saturating_sub(1);
    trace.fused_positions = (0..trace.fusion_candidates)
        .filter(|_| rng.random::<f64>() < policy.fusion_prob)
        .collect();
    if !trace.fused_positions.is_empty() {
        out = frame_fuse(&out, &trace.fused_positions, policy.fusion_mode, weight)?;
    }
    Ok((out, trace))
}

fn xy_range(seq: &LandmarkSequence) -> (f64, f64) {
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in seq.data().chunks_exact(seq.coords()) {
        for a in 0..2 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    (hi[0] - lo[0], hi[1] - lo[1])
}
