use crate::boxes::BoxTensor;
use crate::diff::{kernels, Tape, Var};
use crate::error::{Error, Result};
use crate::ops::{log_containment_prob, OpsConfig};

/// Upper bound on the negative-label loss, in nats. `-ln(1 - P)` diverges as
/// `P -> 1`; beyond the cap the loss is flat and carries no gradient.
pub const BCE_CAP: f64 = 80.0;

/// Binary cross-entropy from a log-probability: `-logp` for a positive,
/// `min(-ln(1 - e^logp), 80)` for a negative.
pub fn bce_from_logp(logp: f64, label: bool) -> Result<f64> {
    if logp.is_nan() || logp > 0.0 {
        return Err(Error::invalid(format!("bce_from_logp needs logp <= 0, got {logp}")));
    }
    Ok(if label {
        -logp
    } else {
        (-kernels::log1mexp(logp)).min(BCE_CAP)
    })
}

/// Mean BCE over a `(k,)` vector of log-probabilities with the given labels.
pub fn bce_loss(tape: &mut Tape, logp: Var, labels: &[bool]) -> Result<Var> {
    let shape = tape.shape(logp).clone();
    if shape.dims() != [labels.len()] {
        return Err(Error::invalid(format!(
            "bce_loss: {} labels for log-probabilities of shape {shape}",
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Ok(tape.scalar(0.0));
    }
    let pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let neg: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    let mut total = tape.scalar(0.0);
    if !pos.is_empty() {
        let lp = tape.index_select(logp, 0, pos)?;
        let s = tape.sum_all(lp)?;
        total = tape.sub(total, s)?;
    }
    if !neg.is_empty() {
        let lp = tape.index_select(logp, 0, neg)?;
        let l1m = tape.log1mexp(lp)?;
        let nll = tape.neg(l1m)?;
        let cap = tape.constant(crate::diff::Tensor::full(tape.shape(nll).clone(), BCE_CAP));
        let capped = tape.min2(nll, cap)?;
        let s = tape.sum_all(capped)?;
        total = tape.add(total, s)?;
    }
    tape.scale(total, 1.0 / labels.len() as f64)
}

/// `-ln P(x | y)`: small when box `y` lies inside box `x`.
pub fn toy_containment_loss(tape: &mut Tape, x: &BoxTensor, y: &BoxTensor, ops: &OpsConfig) -> Result<Var> {
    let logp = log_containment_prob(tape, x, y, ops)?;
    let s = tape.sum_all(logp)?;
    tape.neg(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::Tensor;
    use crate::ops::{IntersectionKind, VolumeKind};

    #[test]
    fn scalar_examples() {
        assert!((bce_from_logp(0.5f64.ln(), true).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((bce_from_logp(0.9f64.ln(), false).unwrap() - 10f64.ln()).abs() < 1e-12);
        assert_eq!(bce_from_logp(0.0, true).unwrap(), 0.0);
        assert_eq!(bce_from_logp(0.0, false).unwrap(), BCE_CAP);
        assert!(bce_from_logp(0.1, true).is_err());
        assert!(bce_from_logp(f64::NAN, false).is_err());
    }

    #[test]
    fn tape_loss_matches_scalar_and_caps_gradient() {
        let mut tape = Tape::new();
        let vals = vec![0.5f64.ln(), 0.9f64.ln(), 0.0];
        let labels = [true, false, false];
        let lp = tape.param(Tensor::vector(vals.clone()));
        let loss = bce_loss(&mut tape, lp, &labels).unwrap();
        let expect: f64 = vals
            .iter()
            .zip(labels)
            .map(|(&v, l)| bce_from_logp(v, l).unwrap())
            .sum::<f64>()
            / 3.0;
        assert!((tape.value(loss).item().unwrap() - expect).abs() < 1e-14);
        tape.backward(loss).unwrap();
        let g = tape.grad(lp).unwrap().data().to_vec();
        assert!((g[0] + 1.0 / 3.0).abs() < 1e-15);
        // d/dx -ln(1 - e^x) = e^x / (1 - e^x) = 9 at x = ln 0.9
        assert!((g[1] - 3.0).abs() < 1e-9, "{g:?}");
        assert_eq!(g[2], 0.0);
    }

    #[test]
    fn toy_overlap_example() {
        let mut tape = Tape::new();
        let ops = OpsConfig::new(IntersectionKind::Hard, 1.0, VolumeKind::Hard, 1.0);
        let x = BoxTensor::constant(&mut tape, Tensor::vector(vec![0.0]), Tensor::vector(vec![1.0])).unwrap();
        let y = BoxTensor::constant(&mut tape, Tensor::vector(vec![0.5]), Tensor::vector(vec![1.5])).unwrap();
        let l = toy_containment_loss(&mut tape, &x, &y, &ops).unwrap();
        assert!((tape.value(l).item().unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        let inner = BoxTensor::constant(&mut tape, Tensor::vector(vec![0.2]), Tensor::vector(vec![0.7])).unwrap();
        let l = toy_containment_loss(&mut tape, &x, &inner, &ops).unwrap();
        assert_eq!(tape.value(l).item().unwrap(), 0.0);
    }
}
