use super::plane::{BitPlane, MaskedWeightPlanes};
use crate::error::{Error, Result};

fn check_lanes(a: &BitPlane, b: &BitPlane, n: usize) -> Result<()> {
    if a.n_bits() != b.n_bits() {
        return Err(Error::Layout(format!(
            "operands have {} and {} lanes",
            a.n_bits(),
            b.n_bits()
        )));
    }
    if n > a.n_bits() {
        return Err(Error::Layout(format!(
            "lane count {n} exceeds plane width {}",
            a.n_bits()
        )));
    }
    if !a.clear_from(n) || !b.clear_from(n) {
        return Err(Error::Layout(format!("pad lanes beyond {n} are not zero")));
    }
    Ok(())
}

/// Bipolar dot product over the first `n` lanes.
///
/// Computed as `n - 2 * popc(a XOR b)`. Zero pad lanes XOR to zero, so no
/// correction is needed for lanes beyond `n`.
pub fn dot_binary(a: &BitPlane, b: &BitPlane, n: usize) -> Result<i32> {
    check_lanes(a, b, n)?;
    let mismatches = super::xor_popcount(a.words(), b.words()) as i64;
    Ok((n as i64 - 2 * mismatches) as i32)
}

/// Bipolar activations against ternary weights: `popc(a^neg) - popc(a^pos)`.
pub fn dot_masked(a: &BitPlane, w: &MaskedWeightPlanes, n: usize) -> Result<i32> {
    check_lanes(a, w.pos(), n)?;
    check_lanes(a, w.neg(), n)?;
    if w.pos()
        .words()
        .iter()
        .zip(w.neg().words())
        .any(|(p, q)| p & q != 0)
    {
        return Err(Error::Invariant("pos and neg planes overlap".into()));
    }
    let neg = super::xor_popcount(a.words(), w.neg().words()) as i32;
    let pos = super::xor_popcount(a.words(), w.pos().words()) as i32;
    Ok(neg - pos)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bitcore::{pack_bipolar, MaskedWeightPlanes};

    #[test]
    fn identical_vectors_give_n() {
        let a = pack_bipolar(&[1, 1, 1, 1]).unwrap();
        assert_eq!(dot_binary(&a, &a, 4).unwrap(), 4);
    }

    #[test]
    fn antipodal_vectors_give_minus_n() {
        let a = pack_bipolar(&[1, -1, 1, -1]).unwrap();
        let b = pack_bipolar(&[-1, 1, -1, 1]).unwrap();
        assert_eq!(dot_binary(&a, &b, 4).unwrap(), -4);
    }

    #[test]
    fn mismatched_lanes_rejected() {
        let a = pack_bipolar(&[1, 1, 1]).unwrap();
        let b = pack_bipolar(&[1, 1]).unwrap();
        assert!(matches!(dot_binary(&a, &b, 2), Err(Error::Layout(_))));
    }

    #[test]
    fn zero_weights_give_zero() {
        let a = pack_bipolar(&[1, -1, -1, 1, 1]).unwrap();
        let w = MaskedWeightPlanes::zeros(5);
        assert_eq!(dot_masked(&a, &w, 5).unwrap(), 0);
    }

    #[test]
    fn masked_small_case() {
        let a = pack_bipolar(&[1, -1, 1]).unwrap();
        let w = MaskedWeightPlanes::from_ternary(&[1, 0, -1]).unwrap();
        assert_eq!(dot_masked(&a, &w, 3).unwrap(), 0);
    }

    #[test]
    fn masked_with_neg_zero_sums_selected_lanes() {
        // neg = 0: result is the sum of activations where pos = 1.
        let acts = [1i8, -1, -1, 1, -1, 1, 1, -1];
        let a = pack_bipolar(&acts).unwrap();
        let w = MaskedWeightPlanes::from_ternary(&[1, 1, 0, 0, 1, 0, 1, 0]).unwrap();
        let expected: i32 = [0usize, 1, 4, 6].iter().map(|&i| acts[i] as i32).sum();
        assert_eq!(dot_masked(&a, &w, 8).unwrap(), expected);
    }
}
