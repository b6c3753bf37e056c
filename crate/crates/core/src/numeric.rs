//! Correctly rounded floating-point summation.
//!
//! Coverage costs are sums of up to a million terms. Accumulating them with
//! [`ExactSum`] makes the result independent of summation order, so the
//! min-form and partition-form costs agree bit for bit and chunked parallel
//! reductions reproduce serial results.

const LIMB_BITS: u32 = 32;
const LIMB_MASK: i64 = (1 << LIMB_BITS) - 1;
/// Enough 32-bit limbs for every finite `f64` (2098 bits) plus carry room.
const NUM_LIMBS: usize = 70;
/// Additions between carry normalizations; keeps every limb far from overflow.
const RENORM_EVERY: u32 = 1 << 30;

/// Fixed-point superaccumulator over the full `f64` range. Every finite
/// term is added exactly into 32-bit limbs; [`ExactSum::value`] rounds the
/// exact total once, to nearest with ties to even.
#[derive(Debug, Clone)]
pub struct ExactSum {
    limbs: [i64; NUM_LIMBS],
    pending: u32,
    /// Sum of non-finite terms (∞, −∞ or NaN), if any.
    special: f64,
}

impl Default for ExactSum {
    fn default() -> Self {
        Self {
            limbs: [0; NUM_LIMBS],
            pending: 0,
            special: 0.0,
        }
    }
}

impl ExactSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        if !x.is_finite() {
            self.special += x;
            return;
        }
        let bits = x.to_bits();
        let biased = ((bits >> 52) & 0x7ff) as u32;
        let frac = bits & ((1u64 << 52) - 1);
        if biased == 0 && frac == 0 {
            return;
        }
        // x = ±mant · 2^(shift − 1074)
        let (mant, shift) = if biased == 0 {
            (frac, 0u32)
        } else {
            (frac | (1u64 << 52), biased - 1)
        };
        let k = (shift / LIMB_BITS) as usize;
        let v = (mant as u128) << (shift % LIMB_BITS);
        let pieces = [(v as i64) & LIMB_MASK, ((v >> 32) as i64) & LIMB_MASK, (v >> 64) as i64];
        if x.is_sign_negative() {
            for (limb, p) in self.limbs[k..k + 3].iter_mut().zip(pieces) {
                *limb -= p;
            }
        } else {
            for (limb, p) in self.limbs[k..k + 3].iter_mut().zip(pieces) {
                *limb += p;
            }
        }
        self.pending += 1;
        if self.pending >= RENORM_EVERY {
            self.renormalize();
        }
    }

    /// Folds another accumulator in; the merged value is exact.
    pub fn merge(&mut self, other: &ExactSum) {
        self.renormalize();
        let mut o = other.clone();
        o.renormalize();
        for (a, b) in self.limbs.iter_mut().zip(o.limbs) {
            *a += b;
        }
        self.special += o.special;
        self.pending = 1;
    }

    fn renormalize(&mut self) {
        let mut carry = 0i64;
        for limb in self.limbs.iter_mut().take(NUM_LIMBS - 1) {
            let t = *limb + carry;
            *limb = t.rem_euclid(1 << LIMB_BITS);
            carry = t.div_euclid(1 << LIMB_BITS);
        }
        self.limbs[NUM_LIMBS - 1] += carry;
        self.pending = 0;
    }

    pub fn value(&self) -> f64 {
        if self.special != 0.0 || self.special.is_nan() {
            return self.special;
        }
        // Carry-propagate into base-2^32 digits; the final carry is the sign.
        let mut digits = [0u64; NUM_LIMBS];
        let mut carry = 0i64;
        for (d, limb) in digits.iter_mut().zip(self.limbs) {
            let t = limb + carry;
            *d = t.rem_euclid(1 << LIMB_BITS) as u64;
            carry = t.div_euclid(1 << LIMB_BITS);
        }
        if carry < 0 {
            let mut neg = self.clone();
            for l in &mut neg.limbs {
                *l = -*l;
            }
            return -neg.value();
        }
        round_digits(&digits)
    }
}

/// Rounds the nonnegative integer `Σ digits[i]·2^(32i)` times `2^-1074`.
fn round_digits(digits: &[u64]) -> f64 {
    let Some(h) = digits.iter().rposition(|d| *d != 0) else {
        return 0.0;
    };
    let digit = |i: isize| if i >= 0 { digits[i as usize] as u128 } else { 0 };
    let h = h as isize;
    let window = (digit(h) << 64) | (digit(h - 1) << 32) | digit(h - 2);
    let sticky = (0..(h - 2).max(0) as usize).any(|i| digits[i] != 0);
    let top = 127 - window.leading_zeros() as i64;
    let low_exp = 32 * (h as i64 - 2) - 1074;
    if top + 32 * (h as i64 - 2) < 53 {
        // Fewer than 54 significant bits from 2^-1074 upward: exactly representable.
        let mant = (window >> (if h >= 2 { 0 } else { 32 * (2 - h) as u32 })) as u64;
        return mant as f64 * f64::from_bits(1);
    }
    let shift = (top - 52) as u32;
    let mut mant = (window >> shift) as u64;
    let rem = window & ((1u128 << shift) - 1);
    let half = 1u128 << (shift - 1);
    let round_up = rem > half || (rem == half && (sticky || mant & 1 == 1));
    let mut exp = low_exp + shift as i64;
    if round_up {
        mant += 1;
        if mant == 1 << 53 {
            mant >>= 1;
            exp += 1;
        }
    }
    if exp + 52 > 1023 {
        return f64::INFINITY;
    }
    scale_pow2(mant as f64, exp)
}

fn pow2(e: i64) -> f64 {
    debug_assert!((-1022..=1023).contains(&e));
    f64::from_bits(((e + 1023) as u64) << 52)
}

/// `x · 2^e`, exact whenever the result is representable.
fn scale_pow2(x: f64, e: i64) -> f64 {
    if e < -1022 {
        x * pow2(e + 64) * pow2(-64)
    } else if e > 1023 {
        x * pow2(e - 64) * pow2(64)
    } else {
        x * pow2(e)
    }
}

impl FromIterator<f64> for ExactSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = ExactSum::new();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}

pub fn exact_sum<I: IntoIterator<Item = f64>>(iter: I) -> f64 {
    iter.into_iter().collect::<ExactSum>().value()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Shewchuk/`math.fsum` partials: an independent correctly rounded sum.
    fn fsum(xs: &[f64]) -> f64 {
        let mut partials: Vec<f64> = Vec::new();
        for &x0 in xs {
            let mut x = x0;
            let mut kept = 0;
            for j in 0..partials.len() {
                let mut y = partials[j];
                if x.abs() < y.abs() {
                    std::mem::swap(&mut x, &mut y);
                }
                let hi = x + y;
                let lo = y - (hi - x);
                if lo != 0.0 {
                    partials[kept] = lo;
                    kept += 1;
                }
                x = hi;
            }
            partials.truncate(kept);
            partials.push(x);
        }
        let mut n = partials.len();
        if n == 0 {
            return 0.0;
        }
        n -= 1;
        let mut hi = partials[n];
        let mut lo = 0.0;
        while n > 0 {
            let x = hi;
            let y = partials[n - 1];
            n -= 1;
            hi = x + y;
            lo = y - (hi - x);
            if lo != 0.0 {
                break;
            }
        }
        if n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0)) {
            let y = lo * 2.0;
            let x = hi + y;
            if y == x - hi {
                hi = x;
            }
        }
        hi
    }

    #[test]
    fn known_sums() {
        assert_eq!(exact_sum([1e100, 1.0, -1e100]), 1.0);
        assert_eq!(exact_sum([0.1; 10]), 1.0);
        assert_eq!(exact_sum(std::iter::empty()), 0.0);
        assert_eq!(exact_sum([f64::from_bits(1), f64::from_bits(3)]), f64::from_bits(4));
        assert_eq!(exact_sum([f64::MAX, -f64::MAX, 2.5]), 2.5);
        assert_eq!(exact_sum([f64::MAX, f64::MAX]), f64::INFINITY);
        assert_eq!(exact_sum([-3.25, 1.0]), -2.25);
        assert!(exact_sum([f64::INFINITY, -f64::INFINITY]).is_nan());
        // 2^53 + 1 + tiny rounds up only because of the sticky tail
        let big = 9007199254740992.0;
        assert_eq!(exact_sum([big, 1.0]), big);
        assert_eq!(exact_sum([big, 1.0, 1e-300]), big + 2.0);
    }

    proptest! {
        #[test]
        fn matches_partials_oracle(
            xs in prop::collection::vec(
                prop_oneof![-1e6f64..1e6, -1e-300f64..1e-300, -1e300f64..1e300, 0.0f64..1.0],
                0..100,
            )
        ) {
            prop_assert_eq!(exact_sum(xs.iter().copied()).to_bits(), fsum(&xs).to_bits());
        }

        #[test]
        fn order_independent(mut xs in prop::collection::vec(0.0f64..1e6, 0..200), seed in any::<u64>()) {
            let forward = exact_sum(xs.iter().copied());
            let mut s = seed | 1;
            for i in (1..xs.len()).rev() {
                s ^= s << 13; s ^= s >> 7; s ^= s << 17;
                xs.swap(i, (s % (i as u64 + 1)) as usize);
            }
            prop_assert_eq!(forward.to_bits(), exact_sum(xs.iter().copied()).to_bits());
            let (a, b) = xs.split_at(xs.len() / 2);
            let mut left: ExactSum = a.iter().copied().collect();
            left.merge(&b.iter().copied().collect());
            prop_assert_eq!(forward.to_bits(), left.value().to_bits());
        }
    }
}
