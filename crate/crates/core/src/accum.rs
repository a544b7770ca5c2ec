//! Order-independent floating-point summation.
//!
//! [`ExactSum`] keeps the running total as a wide fixed-point integer spread
//! over 32-bit limbs, so every finite `f64` is added without rounding. The
//! result therefore depends only on the multiset of inputs, never on the order
//! in which workers or sorted path stores deliver them.

const LIMBS: usize = 67;
const LIMB_BITS: u32 = 32;
const LIMB_MASK: u64 = (1 << LIMB_BITS) - 1;
/// Exponent of bit 0 of limb 0, i.e. the value of one unit in limb 0 is 2^BIAS.
const BIAS: i32 = -1075;
/// Adds allowed before carries must be propagated (each add puts < 2^32 in a limb).
const CARRY_EVERY: u32 = 1 << 30;

#[derive(Clone)]
pub struct ExactSum {
    limbs: [i64; LIMBS],
    pending: u32,
    special: f64,
}

impl Default for ExactSum {
    fn default() -> Self {
        Self::new()
    }
}

impl std::fmt::Debug for ExactSum {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ExactSum({})", self.value())
    }
}

impl ExactSum {
    pub const fn new() -> Self {
        ExactSum {
            limbs: [0; LIMBS],
            pending: 0,
            special: 0.0,
        }
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        if x == 0.0 {
            return;
        }
        if !x.is_finite() {
            self.special += x;
            return;
        }
        let bits = x.to_bits();
        let exp = ((bits >> 52) & 0x7ff) as u32;
        let frac = bits & ((1u64 << 52) - 1);
        let (mant, pos) = if exp == 0 { (frac, 1) } else { (frac | (1u64 << 52), exp) };
        let idx = (pos / LIMB_BITS) as usize;
        let v = (mant as u128) << (pos % LIMB_BITS);
        let parts = [
            (v as u64 & LIMB_MASK) as i64,
            ((v >> 32) as u64 & LIMB_MASK) as i64,
            (v >> 64) as i64,
        ];
        if (bits >> 63) == 1 {
            self.limbs[idx] -= parts[0];
            self.limbs[idx + 1] -= parts[1];
            self.limbs[idx + 2] -= parts[2];
        } else {
            self.limbs[idx] += parts[0];
            self.limbs[idx + 1] += parts[1];
            self.limbs[idx + 2] += parts[2];
        }
        self.pending += 1;
        if self.pending >= CARRY_EVERY {
            self.normalize();
        }
    }

    pub fn merge(&mut self, other: &ExactSum) {
        let mut o = other.clone();
        o.normalize();
        self.normalize();
        for (a, b) in self.limbs.iter_mut().zip(o.limbs.iter()) {
            *a += *b;
        }
        self.special += o.special;
        self.pending = 2;
    }

    /// Subtracts `other` exactly.
    pub fn sub(&mut self, other: &ExactSum) {
        let mut o = other.clone();
        for l in o.limbs.iter_mut() {
            *l = -*l;
        }
        o.special = -o.special;
        self.merge(&o);
    }

    /// Propagates carries so limbs `0..LIMBS-1` lie in `[0, 2^32)`.
    fn normalize(&mut self) {
        for i in 0..LIMBS - 1 {
            let carry = self.limbs[i] >> LIMB_BITS;
            self.limbs[i] -= carry << LIMB_BITS;
            self.limbs[i + 1] += carry;
        }
        self.pending = 0;
    }

    /// The accumulated total, rounded to `f64` by a fixed procedure.
    pub fn value(&self) -> f64 {
        if self.special != 0.0 || self.special.is_nan() {
            return self.special;
        }
        let mut s = self.clone();
        s.normalize();
        let negative = s.limbs[LIMBS - 1] < 0;
        if negative {
            for l in s.limbs.iter_mut() {
                *l = -*l;
            }
            s.normalize();
        }
        let Some(top) = s.limbs.iter().rposition(|&l| l != 0) else {
            return 0.0;
        };
        let lo = top.saturating_sub(3);
        let mut acc = 0.0;
        for i in lo..=top {
            acc += scale_pow2(s.limbs[i] as f64, BIAS + (i as i32) * LIMB_BITS as i32);
        }
        if negative {
            -acc
        } else {
            acc
        }
    }
}

/// `x * 2^e` without intermediate underflow for very negative `e`.
fn scale_pow2(x: f64, e: i32) -> f64 {
    let mut x = x;
    let mut e = e;
    while e < -1000 {
        x *= pow2(-1000);
        e += 1000;
    }
    while e > 1000 {
        x *= pow2(1000);
        e -= 1000;
    }
    x * pow2(e)
}

fn pow2(e: i32) -> f64 {
    debug_assert!((-1022..=1023).contains(&e));
    f64::from_bits(((e + 1023) as u64) << 52)
}

/// A fixed-length vector of exact accumulators.
#[derive(Clone, Debug, Default)]
pub struct ExactVec {
    cells: Vec<ExactSum>,
}

impl ExactVec {
    pub fn zeros(n: usize) -> Self {
        ExactVec {
            cells: vec![ExactSum::new(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    #[inline]
    pub fn add(&mut self, i: usize, x: f64) {
        self.cells[i].add(x);
    }

    pub fn merge(&mut self, other: &ExactVec) {
        assert_eq!(self.cells.len(), other.cells.len());
        for (a, b) in self.cells.iter_mut().zip(&other.cells) {
            a.merge(b);
        }
    }

    pub fn sub(&mut self, other: &ExactVec) {
        assert_eq!(self.cells.len(), other.cells.len());
        for (a, b) in self.cells.iter_mut().zip(&other.cells) {
            a.sub(b);
        }
    }

    pub fn values(&self) -> Vec<f64> {
        self.cells.iter().map(ExactSum::value).collect()
    }
}
