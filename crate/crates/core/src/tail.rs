//! Closed-form sequence rules and tail certificates for the infinite sums
//! that a truncation cannot see.
//!
//! Every rule is a special case of the envelope `c * i^(-p) * r^i` on the
//! 1-based position `i` inside the cone index set, and envelopes are closed
//! under products, quotients and powers. That keeps quotient sequences such
//! as `kappa / lambda` or `m0 / nu` certifiable without extra rule types.

use crate::hilbert::IndexPartition;

/// A named closed-form sequence over 1-based positions.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "rule", content = "constants", rename_all = "lowercase"))]
pub enum SeqRule {
    /// `c * i^(-p)`
    Power { c: f64, p: f64 },
    /// `c * r^i`
    Geometric { c: f64, r: f64 },
}

impl SeqRule {
    pub fn eval(&self, i: usize) -> f64 {
        self.envelope().eval(i)
    }

    pub fn envelope(&self) -> Envelope {
        match *self {
            SeqRule::Power { c, p } => Envelope { c, p, r: 1.0 },
            SeqRule::Geometric { c, r } => Envelope { c, p: 0.0, r },
        }
    }

    /// Rules must be positive at every index; `c > 0`, `r > 0`, finite.
    pub fn is_valid(&self) -> bool {
        match *self {
            SeqRule::Power { c, p } => c > 0.0 && c.is_finite() && p.is_finite(),
            SeqRule::Geometric { c, r } => c > 0.0 && c.is_finite() && r > 0.0 && r.is_finite(),
        }
    }
}

/// Descriptions of the parameter sequences beyond the truncation, all indexed
/// by position in `I`.
///
/// `lambda`, `kappa`, `nu`, `m0` describe the sequences themselves; `rho`
/// bounds the row norms of `M` (one cone row and, when `J` is present, one
/// paired free row per position).
#[derive(Debug, Clone, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TailDecay {
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub lambda: Option<SeqRule>,
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub kappa: Option<SeqRule>,
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub nu: Option<SeqRule>,
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub rho: Option<SeqRule>,
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub m0: Option<SeqRule>,
}

impl TailDecay {
    pub fn rules(&self) -> impl Iterator<Item = &SeqRule> {
        [&self.lambda, &self.kappa, &self.nu, &self.rho, &self.m0].into_iter().flatten()
    }

    /// The `kappa` envelope, with the convention that a partition without
    /// free coordinates has `kappa == 0` structurally.
    pub(crate) fn kappa_or_zero(&self, p: &IndexPartition) -> Option<Option<Envelope>> {
        match (self.kappa, p.free().is_empty()) {
            (Some(k), _) => Some(Some(k.envelope())),
            (None, true) => Some(None),
            (None, false) => None,
        }
    }
}

/// `c * i^(-p) * r^i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Envelope {
    pub c: f64,
    pub p: f64,
    pub r: f64,
}

/// Outcome of bounding an infinite tail.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TailBound {
    Finite(f64),
    /// The series (or supremum) diverges.
    Divergent,
    /// Convergent in principle but not certifiable at this truncation level.
    Inconclusive,
}

impl TailBound {
    pub fn finite(self) -> Option<f64> {
        match self {
            TailBound::Finite(v) => Some(v),
            _ => None,
        }
    }
}

impl Envelope {
    pub const ONE: Envelope = Envelope { c: 1.0, p: 0.0, r: 1.0 };

    pub fn eval(&self, i: usize) -> f64 {
        let i = i as f64;
        self.c * libm::pow(i, -self.p) * libm::pow(self.r, i)
    }

    pub fn mul(&self, o: &Envelope) -> Envelope {
        Envelope { c: self.c * o.c, p: self.p + o.p, r: self.r * o.r }
    }

    pub fn div(&self, o: &Envelope) -> Envelope {
        Envelope { c: self.c / o.c, p: self.p - o.p, r: self.r / o.r }
    }

    pub fn powf(&self, q: f64) -> Envelope {
        Envelope { c: libm::pow(self.c, q), p: self.p * q, r: libm::pow(self.r, q) }
    }

    /// Bound on `sum_{i > n} eval(i)`.
    pub fn tail_sum(&self, n: usize) -> TailBound {
        if self.c == 0.0 {
            return TailBound::Finite(0.0);
        }
        if self.r < 1.0 {
            // ratio test from position n + 1 on
            let nf = n as f64;
            let growth = libm::pow((nf + 2.0) / (nf + 1.0), (-self.p).max(0.0));
            let ratio = growth * self.r;
            if ratio >= 1.0 {
                return TailBound::Inconclusive;
            }
            TailBound::Finite(self.eval(n + 1) / (1.0 - ratio))
        } else if self.r == 1.0 {
            if self.p <= 1.0 {
                return TailBound::Divergent;
            }
            if n == 0 {
                // sum_{i >= 1} i^-p <= 1 + 1/(p-1)
                return TailBound::Finite(self.c * (1.0 + 1.0 / (self.p - 1.0)));
            }
            let nf = n as f64;
            TailBound::Finite(self.c * libm::pow(nf, 1.0 - self.p) / (self.p - 1.0))
        } else {
            TailBound::Divergent
        }
    }

    /// Bound on `sup_{i > n} eval(i)`.
    pub fn tail_sup(&self, n: usize) -> TailBound {
        if self.c == 0.0 {
            return TailBound::Finite(0.0);
        }
        if self.r > 1.0 || (self.r == 1.0 && self.p < 0.0) {
            return TailBound::Divergent;
        }
        let first = n + 1;
        if self.p >= 0.0 {
            return TailBound::Finite(self.eval(first));
        }
        // i^|p| r^i peaks near i* = |p| / -ln r
        let peak = -self.p / -libm::log(self.r);
        let lo = libm::floor(peak) as usize;
        let best = [first, lo.max(first), (lo + 1).max(first)]
            .into_iter()
            .map(|i| self.eval(i))
            .fold(0.0_f64, f64::max);
        TailBound::Finite(best)
    }
}

/// Add two tail bounds; divergence dominates inconclusiveness.
pub fn combine(a: TailBound, b: TailBound) -> TailBound {
    match (a, b) {
        (TailBound::Finite(x), TailBound::Finite(y)) => TailBound::Finite(x + y),
        (TailBound::Divergent, _) | (_, TailBound::Divergent) => TailBound::Divergent,
        _ => TailBound::Inconclusive,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn geometric_tail_is_exact() {
        let e = SeqRule::Geometric { c: 2.0, r: 0.5 }.envelope();
        // sum_{i>3} 2 * 0.5^i = 2 * 0.5^4 / 0.5 = 0.25
        assert_relative_eq!(e.tail_sum(3).finite().unwrap(), 0.25, epsilon = 1e-15);
    }

    #[test]
    fn power_tail_dominates_partial_sums() {
        let e = SeqRule::Power { c: 1.0, p: 2.0 }.envelope();
        for n in [1usize, 5, 50] {
            let bound = e.tail_sum(n).finite().unwrap();
            let partial: f64 = (n + 1..200_000).map(|i| e.eval(i)).sum();
            assert!(partial <= bound, "n={n}: {partial} > {bound}");
            assert!(bound - partial < 2.0 / n as f64);
        }
        assert_eq!(SeqRule::Power { c: 1.0, p: 1.0 }.envelope().tail_sum(10), TailBound::Divergent);
    }

    #[test]
    fn growing_power_times_geometric() {
        // i^2 0.5^i: the ratio bound only kicks in once (n+2)^2/(n+1)^2 * 0.5 < 1
        let e = Envelope { c: 1.0, p: -2.0, r: 0.5 };
        assert_eq!(e.tail_sum(0), TailBound::Inconclusive);
        let bound = e.tail_sum(3).finite().unwrap();
        let partial: f64 = (4..400).map(|i| e.eval(i)).sum();
        assert!(partial <= bound);
        let sup = e.tail_sup(0).finite().unwrap();
        assert!((1..100).all(|i| e.eval(i) <= sup + 1e-15));
    }

    #[test]
    fn quotient_envelopes() {
        let kappa = SeqRule::Power { c: 0.5, p: 3.0 }.envelope();
        let lambda = SeqRule::Power { c: 1.0, p: 2.0 }.envelope();
        let ratio = kappa.div(&lambda);
        assert_relative_eq!(ratio.eval(4), 0.125, epsilon = 1e-15);
        assert!(matches!(ratio.powf(2.0).tail_sum(10), TailBound::Finite(_)));
        assert_eq!(ratio.tail_sum(10), TailBound::Divergent);
    }

    #[test]
    fn sup_bounds() {
        assert_eq!(SeqRule::Geometric { c: 1.0, r: 2.0 }.envelope().tail_sup(1), TailBound::Divergent);
        assert_relative_eq!(SeqRule::Power { c: 3.0, p: 1.0 }.envelope().tail_sup(2).finite().unwrap(), 1.0);
    }
}
