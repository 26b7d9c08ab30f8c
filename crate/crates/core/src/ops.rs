//! Intersection, volume, pooling and regularization of boxes.
//!
//! Volumes are natural-log volumes throughout. A product of `n` side
//! lengths over- or underflows long before `n` reaches a few hundred, while
//! the sum of their logs stays finite; [`linear_volume`] exists only for
//! display.

use serde::{Deserialize, Serialize};

use crate::boxes::BoxTensor;
use crate::diff::{Tape, Var};
use crate::error::{Error, Result};

/// Euler-Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntersectionKind {
    /// Coordinate-wise max of mins and min of maxes.
    Hard,
    /// Temperature-smoothed max/min via logsumexp.
    Gumbel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VolumeKind {
    /// `Π max(Z - z, 0)`.
    Hard,
    /// `Π T·softplus((Z - z)/T)`.
    Soft,
    /// `Π T·softplus((Z - z - 2γβ)/T)`.
    BesselApprox,
}

/// Which intersection and volume to use, with their temperatures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OpsConfig {
    pub intersection: IntersectionKind,
    /// β; also enters the Bessel-approximate volume.
    pub intersection_temperature: f64,
    pub volume: VolumeKind,
    /// T.
    pub volume_temperature: f64,
}

impl Default for OpsConfig {
    fn default() -> Self {
        Self {
            intersection: IntersectionKind::Hard,
            intersection_temperature: 1.0,
            volume: VolumeKind::Soft,
            volume_temperature: 1.0,
        }
    }
}

impl OpsConfig {
    pub fn new(
        intersection: IntersectionKind,
        intersection_temperature: f64,
        volume: VolumeKind,
        volume_temperature: f64,
    ) -> Self {
        Self {
            intersection,
            intersection_temperature,
            volume,
            volume_temperature,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_positive("intersection_temperature", self.intersection_temperature)?;
        check_positive("volume_temperature", self.volume_temperature)
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be positive and finite, got {v}")))
    }
}

fn check_same_dim(tape: &Tape, a: &BoxTensor, b: &BoxTensor) -> Result<()> {
    if a.dim(tape) != b.dim(tape) {
        return Err(Error::ShapeMismatch {
            op: "intersect",
            lhs: tape.shape(a.min).clone(),
            rhs: tape.shape(b.min).clone(),
        });
    }
    Ok(())
}

/// Intersection of two box tensors with broadcast-compatible box shapes.
pub fn intersect(
    tape: &mut Tape,
    kind: IntersectionKind,
    a: &BoxTensor,
    b: &BoxTensor,
    beta: f64,
) -> Result<BoxTensor> {
    check_same_dim(tape, a, b)?;
    match kind {
        IntersectionKind::Hard => Ok(BoxTensor {
            min: tape.max2(a.min, b.min)?,
            max: tape.min2(a.max, b.max)?,
        }),
        IntersectionKind::Gumbel => {
            check_positive("intersection_temperature", beta)?;
            // z = β·LSE(z_a/β, z_b/β), Z = -β·LSE(-Z_a/β, -Z_b/β)
            let za = tape.scale(a.min, 1.0 / beta)?;
            let zb = tape.scale(b.min, 1.0 / beta)?;
            let lse = tape.logsumexp2(za, zb)?;
            let min = tape.scale(lse, beta)?;
            let ma = tape.scale(a.max, -1.0 / beta)?;
            let mb = tape.scale(b.max, -1.0 / beta)?;
            let lse = tape.logsumexp2(ma, mb)?;
            let max = tape.scale(lse, -beta)?;
            Ok(BoxTensor { min, max })
        }
    }
}

/// Per-dimension log side factors, without the `n·ln T` constant of the
/// soft kinds: `ln relu(s)` for hard, `ln softplus(s'/T)` otherwise.
fn log_volume_terms(tape: &mut Tape, kind: VolumeKind, b: &BoxTensor, temperature: f64, beta: f64) -> Result<Var> {
    check_positive("volume_temperature", temperature)?;
    let sides = b.sides(tape)?;
    match kind {
        VolumeKind::Hard => {
            let pos = tape.relu(sides)?;
            tape.log(pos)
        }
        VolumeKind::Soft => {
            let x = tape.scale(sides, 1.0 / temperature)?;
            tape.log_softplus(x)
        }
        VolumeKind::BesselApprox => {
            check_positive("intersection_temperature", beta)?;
            let shifted = tape.add_scalar(sides, -2.0 * EULER_GAMMA * beta)?;
            let x = tape.scale(shifted, 1.0 / temperature)?;
            tape.log_softplus(x)
        }
    }
}

/// Log-volume per box; the result has the box shape.
///
/// Hard volume of a box with any side `<= 0` is `-inf` and contributes no
/// gradient.
pub fn log_volume(tape: &mut Tape, kind: VolumeKind, b: &BoxTensor, temperature: f64, beta: f64) -> Result<Var> {
    let last = tape.shape(b.min).rank() - 1;
    let n = b.dim(tape) as f64;
    let per_dim = log_volume_terms(tape, kind, b, temperature, beta)?;
    let total = tape.sum_axis(per_dim, last)?;
    match kind {
        VolumeKind::Hard => Ok(total),
        VolumeKind::Soft | VolumeKind::BesselApprox => tape.add_scalar(total, n * temperature.ln()),
    }
}

/// Log-volume using the kinds and temperatures of `cfg`.
pub fn log_volume_with(tape: &mut Tape, cfg: &OpsConfig, b: &BoxTensor) -> Result<Var> {
    log_volume(
        tape,
        cfg.volume,
        b,
        cfg.volume_temperature,
        cfg.intersection_temperature,
    )
}

/// `exp(log_volume)`, for display. Underflows in high dimension.
pub fn linear_volume(log_volume: f64) -> f64 {
    log_volume.exp()
}

/// `ln P(head → tail) = ln vol(head ∩ tail) - ln vol(tail)`, clamped to be
/// at most 0.
///
/// The two log-volumes are subtracted dimension by dimension before
/// summing, so a dimension where the tail lies inside the head contributes
/// exactly 0 instead of the rounding residue of two large sums.
///
/// The clamp is `x - relu(x)`, so gradients pass through unchanged at and
/// below 0. With the hard intersection the clamp never binds.
pub fn log_containment_prob(tape: &mut Tape, head: &BoxTensor, tail: &BoxTensor, cfg: &OpsConfig) -> Result<Var> {
    let diff = log_containment_prob_unclamped(tape, head, tail, cfg)?;
    let over = tape.relu(diff)?;
    tape.sub(diff, over)
}

/// Same as [`log_containment_prob`] without the clamp.
pub fn log_containment_prob_unclamped(
    tape: &mut Tape,
    head: &BoxTensor,
    tail: &BoxTensor,
    cfg: &OpsConfig,
) -> Result<Var> {
    cfg.validate()?;
    let inter = intersect(tape, cfg.intersection, head, tail, cfg.intersection_temperature)?;
    let (t, b) = (cfg.volume_temperature, cfg.intersection_temperature);
    let li = log_volume_terms(tape, cfg.volume, &inter, t, b)?;
    let lt = log_volume_terms(tape, cfg.volume, tail, t, b)?;
    let per_dim = tape.sub(li, lt)?;
    let last = tape.shape(per_dim).rank() - 1;
    tape.sum_axis(per_dim, last)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    HardIntersection,
    Mean,
}

/// Reduces axis `axis` of the box shape.
pub fn pool(tape: &mut Tape, kind: PoolKind, b: &BoxTensor, axis: usize) -> Result<BoxTensor> {
    let rank = b.box_shape(tape).rank();
    if axis >= rank {
        return Err(Error::invalid(format!(
            "pool: axis {axis} out of range for box shape of rank {rank}"
        )));
    }
    match kind {
        PoolKind::HardIntersection => Ok(BoxTensor {
            min: tape.max_axis(b.min, axis)?,
            max: tape.min_axis(b.max, axis)?,
        }),
        PoolKind::Mean => Ok(BoxTensor {
            min: tape.mean_axis(b.min, axis)?,
            max: tape.mean_axis(b.max, axis)?,
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegularizerKind {
    None,
    /// Squared side lengths, optionally of the soft log side.
    L2Side,
    /// Hinge on log-volume above a threshold.
    VolumeThreshold,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegularizerConfig {
    pub kind: RegularizerKind,
    /// λ.
    pub weight: f64,
    /// τ, a log-volume; used by `volume_threshold` only.
    pub threshold: f64,
    pub log_scale: bool,
}

impl Default for RegularizerConfig {
    fn default() -> Self {
        Self {
            kind: RegularizerKind::L2Side,
            weight: 1e-3,
            threshold: 0.0,
            log_scale: true,
        }
    }
}

impl RegularizerConfig {
    pub fn none() -> Self {
        Self {
            kind: RegularizerKind::None,
            weight: 0.0,
            ..Self::default()
        }
    }

    pub fn is_active(&self) -> bool {
        self.kind != RegularizerKind::None && self.weight > 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.weight >= 0.0) || !self.weight.is_finite() {
            return Err(Error::invalid(format!(
                "regularizer weight must be >= 0, got {}",
                self.weight
            )));
        }
        Ok(())
    }
}

/// Scalar penalty averaged over all boxes of `b`:
///
/// * `l2_side`: `λ · mean_boxes Σ_i s_i²` with `s_i = Z_i - z_i`, or
///   `s_i = ln softplus(Z_i - z_i)` when `log_scale` is set;
/// * `volume_threshold`: `λ · mean_boxes max(0, ln vol - τ)`.
pub fn regularize(tape: &mut Tape, reg: &RegularizerConfig, b: &BoxTensor, ops: &OpsConfig) -> Result<Var> {
    reg.validate()?;
    if b.num_boxes(tape) == 0 || reg.kind == RegularizerKind::None || reg.weight == 0.0 {
        return Ok(tape.scalar(0.0));
    }
    let per_box = match reg.kind {
        RegularizerKind::L2Side => {
            let last = tape.shape(b.min).rank() - 1;
            let sides = b.sides(tape)?;
            let s = if reg.log_scale {
                tape.log_softplus(sides)?
            } else {
                sides
            };
            let sq = tape.mul(s, s)?;
            tape.sum_axis(sq, last)?
        }
        RegularizerKind::VolumeThreshold => {
            let lv = log_volume_with(tape, ops, b)?;
            let excess = tape.add_scalar(lv, -reg.threshold)?;
            tape.relu(excess)?
        }
        RegularizerKind::None => unreachable!(),
    };
    let mean = tape.mean_all(per_box)?;
    tape.scale(mean, reg.weight)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::Tensor;

    const LN2: f64 = std::f64::consts::LN_2;

    fn boxes(t: &mut Tape, lo: &[f64], hi: &[f64], shape: Vec<usize>) -> BoxTensor {
        BoxTensor::constant(
            t,
            Tensor::new(lo.to_vec(), shape.clone()).unwrap(),
            Tensor::new(hi.to_vec(), shape).unwrap(),
        )
        .unwrap()
    }

    fn listing_pair(t: &mut Tape) -> (BoxTensor, BoxTensor) {
        let a = boxes(t, &[-2.0, -2.0], &[-1.0, -1.0], vec![2]);
        let b = boxes(t, &[1.0, 0.0], &[3.0, 4.0], vec![2]);
        (a, b)
    }

    fn item(t: &Tape, v: Var) -> f64 {
        t.value(v).item().unwrap()
    }

    #[test]
    fn hard_intersection_of_disjoint_listing_boxes() {
        let mut t = Tape::new();
        let (a, b) = listing_pair(&mut t);
        let i = intersect(&mut t, IntersectionKind::Hard, &a, &b, 1.0).unwrap();
        assert_eq!(i.min_values(&t), &[1.0, 0.0]);
        assert_eq!(i.max_values(&t), &[-1.0, -1.0]);
        let lv = log_volume(&mut t, VolumeKind::Hard, &i, 1.0, 1.0).unwrap();
        assert_eq!(item(&t, lv), f64::NEG_INFINITY);
    }

    #[test]
    fn hard_intersection_idempotent() {
        let mut t = Tape::new();
        let (a, _) = listing_pair(&mut t);
        let i = intersect(&mut t, IntersectionKind::Hard, &a, &a, 1.0).unwrap();
        assert_eq!(i.min_values(&t), a.min_values(&t));
        assert_eq!(i.max_values(&t), a.max_values(&t));
    }

    #[test]
    fn gumbel_self_intersection_shrinks() {
        let mut t = Tape::new();
        let a = boxes(&mut t, &[0.0], &[1.0], vec![1]);
        let i = intersect(&mut t, IntersectionKind::Gumbel, &a, &a, 1.0).unwrap();
        assert!((i.min_values(&t)[0] - LN2).abs() < 1e-15);
        assert!((i.max_values(&t)[0] - (1.0 - LN2)).abs() < 1e-15);
    }

    #[test]
    fn volume_examples() {
        let mut t = Tape::new();
        let (_, b) = listing_pair(&mut t);
        let lv = log_volume(&mut t, VolumeKind::Hard, &b, 1.0, 1.0).unwrap();
        assert!((item(&t, lv) - 8f64.ln()).abs() < 1e-15);
        assert!((linear_volume(item(&t, lv)) - 8.0).abs() < 1e-12);

        let flat = boxes(&mut t, &[0.3, 0.3], &[0.3, 0.3], vec![2]);
        let lv = log_volume(&mut t, VolumeKind::Soft, &flat, 1.0, 1.0).unwrap();
        assert!((item(&t, lv) - 2.0 * LN2.ln()).abs() < 1e-14);

        let d = 2.0 * EULER_GAMMA;
        let bessel = boxes(&mut t, &[0.0], &[d], vec![1]);
        let lv = log_volume(&mut t, VolumeKind::BesselApprox, &bessel, 1.0, 1.0).unwrap();
        assert!((item(&t, lv) - LN2.ln()).abs() < 1e-14);
    }

    #[test]
    fn bad_temperatures_rejected() {
        let mut t = Tape::new();
        let (a, b) = listing_pair(&mut t);
        assert!(log_volume(&mut t, VolumeKind::Soft, &a, 0.0, 1.0).is_err());
        assert!(log_volume(&mut t, VolumeKind::BesselApprox, &a, 1.0, -1.0).is_err());
        assert!(intersect(&mut t, IntersectionKind::Gumbel, &a, &b, 0.0).is_err());
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let mut t = Tape::new();
        let (a, _) = listing_pair(&mut t);
        let c = boxes(&mut t, &[0.0], &[1.0], vec![1]);
        assert!(intersect(&mut t, IntersectionKind::Hard, &a, &c, 1.0).is_err());
    }

    #[test]
    fn containment_examples() {
        let hard = OpsConfig::new(IntersectionKind::Hard, 1.0, VolumeKind::Hard, 1.0);
        let mut t = Tape::new();
        let head = boxes(&mut t, &[0.0], &[1.0], vec![1]);
        let tail = boxes(&mut t, &[0.5], &[1.5], vec![1]);
        let lp = log_containment_prob(&mut t, &head, &tail, &hard).unwrap();
        assert!((item(&t, lp) - 0.5f64.ln()).abs() < 1e-15);

        let inner = boxes(&mut t, &[0.2], &[0.7], vec![1]);
        let lp = log_containment_prob(&mut t, &head, &inner, &hard).unwrap();
        assert_eq!(item(&t, lp), 0.0);

        let far = boxes(&mut t, &[3.0], &[4.0], vec![1]);
        let lp = log_containment_prob(&mut t, &head, &far, &hard).unwrap();
        assert_eq!(item(&t, lp), f64::NEG_INFINITY);
    }

    #[test]
    fn clamp_is_a_no_op_for_gumbel_bessel() {
        // LSE >= max, so Gumbel corners never leave the hard intersection
        // and the ratio stays below 1 before clamping as well.
        let cfg = OpsConfig::new(IntersectionKind::Gumbel, 0.5, VolumeKind::BesselApprox, 1.0);
        let mut t = Tape::new();
        let head = boxes(&mut t, &[-5.0, -5.0], &[5.0, 5.0], vec![2]);
        let tail = boxes(&mut t, &[0.0, 0.0], &[0.1, 0.1], vec![2]);
        let lp = log_containment_prob(&mut t, &head, &tail, &cfg).unwrap();
        let raw = log_containment_prob_unclamped(&mut t, &head, &tail, &cfg).unwrap();
        assert!(item(&t, raw) <= 0.0);
        assert_eq!(item(&t, lp), item(&t, raw));
    }

    #[test]
    fn pooling_examples() {
        let mut t = Tape::new();
        let pair = boxes(&mut t, &[-2.0, -2.0, 1.0, 0.0], &[-1.0, -1.0, 3.0, 4.0], vec![2, 2]);
        let hi = pool(&mut t, PoolKind::HardIntersection, &pair, 0).unwrap();
        assert_eq!(hi.min_values(&t), &[1.0, 0.0]);
        assert_eq!(hi.max_values(&t), &[-1.0, -1.0]);
        let mean = pool(&mut t, PoolKind::Mean, &pair, 0).unwrap();
        assert_eq!(mean.min_values(&t), &[-0.5, -1.0]);
        assert_eq!(mean.max_values(&t), &[1.0, 1.5]);

        let single = boxes(&mut t, &[1.0, 2.0], &[3.0, 4.0], vec![1, 2]);
        for kind in [PoolKind::HardIntersection, PoolKind::Mean] {
            let p = pool(&mut t, kind, &single, 0).unwrap();
            assert_eq!(p.min_values(&t), &[1.0, 2.0]);
            assert_eq!(p.max_values(&t), &[3.0, 4.0]);
        }
        assert!(pool(&mut t, PoolKind::Mean, &single, 1).is_err());
    }

    #[test]
    fn regularizer_examples() {
        let ops = OpsConfig::default();
        let mut t = Tape::new();
        let (_, b) = listing_pair(&mut t);
        let l2 = RegularizerConfig {
            kind: RegularizerKind::L2Side,
            weight: 1.0,
            threshold: 0.0,
            log_scale: false,
        };
        let p = regularize(&mut t, &l2, &b, &ops).unwrap();
        assert_eq!(item(&t, p), 20.0);

        let logged = RegularizerConfig { log_scale: true, ..l2 };
        let p = regularize(&mut t, &logged, &b, &ops).unwrap();
        let want = crate::diff::kernels::log_softplus(2.0).powi(2) + crate::diff::kernels::log_softplus(4.0).powi(2);
        assert!((item(&t, p) - want).abs() < 1e-14);

        for kind in [RegularizerKind::L2Side, RegularizerKind::VolumeThreshold] {
            let zero = RegularizerConfig {
                kind,
                weight: 0.0,
                ..l2
            };
            let p = regularize(&mut t, &zero, &b, &ops).unwrap();
            assert_eq!(item(&t, p), 0.0);
        }

        let lv = log_volume_with(&mut t, &ops, &b).unwrap();
        let at = RegularizerConfig {
            kind: RegularizerKind::VolumeThreshold,
            weight: 1.0,
            threshold: item(&t, lv),
            log_scale: false,
        };
        let p = regularize(&mut t, &at, &b, &ops).unwrap();
        assert_eq!(item(&t, p), 0.0);

        let negative = RegularizerConfig { weight: -1.0, ..l2 };
        assert!(regularize(&mut t, &negative, &b, &ops).is_err());
    }
}
