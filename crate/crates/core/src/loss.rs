//! The k-piece-wise linear convex loss family.
//!
//! A loss with `k` pieces is the pointwise maximum of the identity piece `u`
//! and `k - 1` affine pieces `-tau_m * u + eps_m`:
//!
//! ```text
//! L(u) = max(u, -tau_1 u + eps_1, ..., -tau_{k-1} u + eps_{k-1})
//! ```
//!
//! Hinge (`tau = eps = 0`) and pinball (`eps = 0`) losses are members of the
//! family. `k = 1` is the bare identity loss; it is valid here for analysis
//! but rejected by the trainer.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("taus and epsilons must have the same length (got {taus} and {epsilons})")]
    LengthMismatch { taus: usize, epsilons: usize },
    #[error("loss parameter {name}[{index}] is not finite")]
    NonFiniteParameter { name: &'static str, index: usize },
    #[error("loss argument {0} is not finite")]
    NonFiniteArgument(f64),
    #[error("piece set is empty")]
    EmptyPieces,
    #[error("piece {index} is not finite")]
    NonFinitePiece { index: usize },
    #[error("no identity piece (slope 1, intercept 0) among the given pieces")]
    MissingIdentity,
}

/// One affine segment `slope * u + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffinePiece {
    pub slope: f64,
    pub intercept: f64,
}

impl AffinePiece {
    pub const IDENTITY: AffinePiece = AffinePiece { slope: 1.0, intercept: 0.0 };

    pub fn new(slope: f64, intercept: f64) -> Self {
        Self { slope, intercept }
    }

    #[inline]
    pub fn eval(&self, u: f64) -> f64 {
        self.slope * u + self.intercept
    }

    fn is_identity(&self) -> bool {
        self.slope == 1.0 && self.intercept == 0.0
    }
}

/// Parameters `(tau_1..tau_{k-1}, eps_1..eps_{k-1})` of one loss in the family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLossSpec", into = "RawLossSpec")]
pub struct LossSpec {
    taus: Vec<f64>,
    epsilons: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawLossSpec {
    taus: Vec<f64>,
    epsilons: Vec<f64>,
}

impl TryFrom<RawLossSpec> for LossSpec {
    type Error = LossError;
    fn try_from(raw: RawLossSpec) -> Result<Self, Self::Error> {
        LossSpec::new(raw.taus, raw.epsilons)
    }
}

impl From<LossSpec> for RawLossSpec {
    fn from(spec: LossSpec) -> Self {
        RawLossSpec { taus: spec.taus, epsilons: spec.epsilons }
    }
}

impl LossSpec {
    pub fn new(taus: Vec<f64>, epsilons: Vec<f64>) -> Result<Self, LossError> {
        if taus.len() != epsilons.len() {
            return Err(LossError::LengthMismatch { taus: taus.len(), epsilons: epsilons.len() });
        }
        if let Some(index) = taus.iter().position(|t| !t.is_finite()) {
            return Err(LossError::NonFiniteParameter { name: "tau", index });
        }
        if let Some(index) = epsilons.iter().position(|e| !e.is_finite()) {
            return Err(LossError::NonFiniteParameter { name: "epsilon", index });
        }
        Ok(Self { taus, epsilons })
    }

    /// The identity-only loss `L(u) = u` (k = 1).
    pub fn identity() -> Self {
        Self { taus: Vec::new(), epsilons: Vec::new() }
    }

    /// Hinge loss written with `k` pieces: all parameters zero.
    pub fn hinge(k: usize) -> Self {
        let extra = k.saturating_sub(1).max(1);
        Self { taus: vec![0.0; extra], epsilons: vec![0.0; extra] }
    }

    /// Pinball loss `max(u, -tau u)`.
    pub fn pinball(tau: f64) -> Result<Self, LossError> {
        Self::new(vec![tau], vec![0.0])
    }

    /// Number of pieces, counting the identity.
    pub fn k(&self) -> usize {
        self.taus.len() + 1
    }

    pub fn taus(&self) -> &[f64] {
        &self.taus
    }

    pub fn epsilons(&self) -> &[f64] {
        &self.epsilons
    }

    /// All pieces, identity first, then `(-tau_m, eps_m)` in parameter order.
    pub fn pieces(&self) -> Vec<AffinePiece> {
        std::iter::once(AffinePiece::IDENTITY)
            .chain(self.taus.iter().zip(&self.epsilons).map(|(&t, &e)| AffinePiece::new(-t, e)))
            .collect()
    }

    /// Slopes of the pieces in the same order as [`LossSpec::pieces`]: `1, -tau_1, ...`.
    pub fn slopes(&self) -> Vec<f64> {
        std::iter::once(1.0).chain(self.taus.iter().map(|t| -t)).collect()
    }

    /// Intercepts in piece order: `0, eps_1, ...`.
    pub fn intercepts(&self) -> Vec<f64> {
        std::iter::once(0.0).chain(self.epsilons.iter().copied()).collect()
    }

    /// Evaluates the loss without checking `u`; NaN in, NaN out.
    #[inline]
    pub fn value(&self, u: f64) -> f64 {
        self.taus
            .iter()
            .zip(&self.epsilons)
            .fold(u, |acc, (&t, &e)| acc.max(-t * u + e))
    }

    pub fn eval(&self, u: f64) -> Result<f64, LossError> {
        if !u.is_finite() {
            return Err(LossError::NonFiniteArgument(u));
        }
        Ok(self.value(u))
    }

    /// The subdifferential at `u`: the range of slopes of the pieces that
    /// attain the maximum there.
    pub fn subgradient(&self, u: f64) -> Result<SlopeInterval, LossError> {
        let top = self.eval(u)?;
        let tol = ACTIVE_TOL * (1.0 + top.abs());
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for piece in self.pieces() {
            if top - piece.eval(u) <= tol {
                lo = lo.min(piece.slope);
                hi = hi.max(piece.slope);
            }
        }
        Ok(SlopeInterval { lo, hi })
    }

    pub fn lipschitz_constant(&self) -> f64 {
        self.taus.iter().fold(1.0_f64, |acc, t| acc.max(t.abs()))
    }

    /// `[min, max]` over `{1, -tau_1, ..., -tau_{k-1}}`.
    pub fn influence_bounds(&self) -> (f64, f64) {
        self.slopes()
            .into_iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s), hi.max(s)))
    }

    pub fn check_properties(&self) -> LossPropertyReport {
        let (influence_lower, influence_upper) = self.influence_bounds();

        let derivative_algebraic_holds = self
            .taus
            .iter()
            .zip(&self.epsilons)
            .filter(|(t, _)| **t != 0.0)
            .all(|(t, e)| e / t != 1.0);
        let derivative_condition_holds = self.right_derivative(1.0) > 0.0;

        let mut nonnegativity_condition_holds = true;
        let mut skipped_pieces = Vec::new();
        for i in 0..self.taus.len() {
            for j in 0..self.taus.len() {
                let (ti, tj) = (self.taus[i], self.taus[j]);
                if ti != tj {
                    let (ei, ej) = (self.epsilons[i], self.epsilons[j]);
                    if (ei * tj - ej * ti) / (tj - ti) < 0.0 {
                        nonnegativity_condition_holds = false;
                    }
                }
            }
            if self.taus[i] == -1.0 {
                skipped_pieces.push(i + 1);
            } else if self.epsilons[i] / (1.0 + self.taus[i]) < 0.0 {
                nonnegativity_condition_holds = false;
            }
        }

        LossPropertyReport {
            lipschitz_constant: self.lipschitz_constant(),
            derivative_condition_holds,
            derivative_algebraic_holds,
            nonnegativity_condition_holds,
            nonnegativity_skipped_pieces: skipped_pieces,
            minimum_value: self.minimum_value(),
            influence_lower,
            influence_upper,
        }
    }

    /// Largest slope among the pieces active at `u`.
    pub fn right_derivative(&self, u: f64) -> f64 {
        match self.subgradient(u) {
            Ok(interval) => interval.hi,
            Err(_) => f64::NAN,
        }
    }

    /// Infimum of the loss over the real line (`-inf` when unbounded below).
    pub fn minimum_value(&self) -> f64 {
        let env = self.envelope();
        // Slopes are sorted ascending; bounded below iff the line has a
        // non-positive slope on the left and a non-negative one on the right.
        let left = env.first().map(|p| p.slope).unwrap_or(1.0);
        let right = env.last().map(|p| p.slope).unwrap_or(1.0);
        if left > 0.0 || right < 0.0 {
            return f64::NEG_INFINITY;
        }
        let mut best = f64::INFINITY;
        for pair in env.windows(2) {
            let u = crossing(&pair[0], &pair[1]);
            best = best.min(self.value(u));
        }
        best
    }

    /// Builds the spec whose pointwise maximum equals that of `pieces`.
    ///
    /// Exactly-duplicated pieces are dropped; one piece must be the identity.
    pub fn from_pieces(pieces: &[AffinePiece]) -> Result<Self, LossError> {
        if pieces.is_empty() {
            return Err(LossError::EmptyPieces);
        }
        if let Some(index) =
            pieces.iter().position(|p| !p.slope.is_finite() || !p.intercept.is_finite())
        {
            return Err(LossError::NonFinitePiece { index });
        }
        if !pieces.iter().any(AffinePiece::is_identity) {
            return Err(LossError::MissingIdentity);
        }
        let mut unique: Vec<AffinePiece> = Vec::new();
        for p in pieces.iter().filter(|p| !p.is_identity()) {
            if !unique.contains(p) {
                unique.push(*p);
            }
        }
        let taus = unique.iter().map(|p| -p.slope).collect();
        let epsilons = unique.iter().map(|p| p.intercept).collect();
        Self::new(taus, epsilons)
    }

    /// Pieces that form the upper envelope, sorted by slope ascending.
    ///
    /// Two specs define the same loss function exactly when their envelopes
    /// are equal, so this is the canonical form of the loss.
    pub fn envelope(&self) -> Vec<AffinePiece> {
        let mut pieces = self.pieces();
        pieces.sort_by(|a, b| {
            a.slope
                .total_cmp(&b.slope)
                .then(b.intercept.total_cmp(&a.intercept))
        });
        pieces.dedup_by(|next, kept| next.slope == kept.slope);

        let mut hull: Vec<AffinePiece> = Vec::with_capacity(pieces.len());
        for p in pieces {
            while hull.len() >= 2 {
                let a = hull[hull.len() - 2];
                let b = hull[hull.len() - 1];
                // b is redundant when p overtakes a no later than b does.
                let lhs = (p.intercept - a.intercept) * (b.slope - a.slope);
                let rhs = (b.intercept - a.intercept) * (p.slope - a.slope);
                if lhs >= rhs {
                    hull.pop();
                } else {
                    break;
                }
            }
            hull.push(p);
        }
        hull
    }

    /// The equivalent spec with only envelope pieces (identity always kept).
    pub fn canonical(&self) -> LossSpec {
        let env = self.envelope();
        let mut pieces = vec![AffinePiece::IDENTITY];
        pieces.extend(env.into_iter().filter(|p| !p.is_identity()));
        LossSpec::from_pieces(&pieces).expect("envelope of a valid spec is valid")
    }

    /// Bit-exact key of the envelope, usable for memoizing per-loss work.
    pub fn canonical_key(&self) -> Vec<(u64, u64)> {
        self.envelope()
            .iter()
            .map(|p| ((p.slope + 0.0).to_bits(), (p.intercept + 0.0).to_bits()))
            .collect()
    }

    /// The same function written with `k` pieces, by repeating the last
    /// piece. Specs with more than `k` pieces are returned unchanged.
    pub fn padded(&self, k: usize) -> LossSpec {
        let mut spec = self.clone();
        let (tau, eps) = match (self.taus.last(), self.epsilons.last()) {
            (Some(&t), Some(&e)) => (t, e),
            // -tau u + eps = u
            _ => (-1.0, 0.0),
        };
        while spec.k() < k {
            spec.taus.push(tau);
            spec.epsilons.push(eps);
        }
        spec
    }

    /// Breakpoints of the loss (where two envelope pieces cross), ascending.
    pub fn breakpoints(&self) -> Vec<f64> {
        self.envelope().windows(2).map(|w| crossing(&w[0], &w[1])).collect()
    }
}

impl std::fmt::Display for LossSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "k={} tau={:?} eps={:?}", self.k(), self.taus, self.epsilons)
    }
}

/// Relative tolerance used to decide which pieces attain the maximum.
const ACTIVE_TOL: f64 = 1e-12;

fn crossing(a: &AffinePiece, b: &AffinePiece) -> f64 {
    (a.intercept - b.intercept) / (b.slope - a.slope)
}

/// Closed interval of slopes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeInterval {
    pub lo: f64,
    pub hi: f64,
}

impl SlopeInterval {
    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn is_within(&self, lo: f64, hi: f64) -> bool {
        lo <= self.lo && self.hi <= hi
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossPropertyReport {
    pub lipschitz_constant: f64,
    /// Right derivative at `u = 1` is strictly positive (checked on the pieces).
    pub derivative_condition_holds: bool,
    /// `eps_i / tau_i != 1` for every piece with `tau_i != 0`.
    pub derivative_algebraic_holds: bool,
    pub nonnegativity_condition_holds: bool,
    /// 1-based indices of pieces with `tau = -1`, left out of `eps/(1+tau) >= 0`.
    pub nonnegativity_skipped_pieces: Vec<usize>,
    /// Exact infimum of the loss; `-inf` when unbounded below.
    pub minimum_value: f64,
    pub influence_lower: f64,
    pub influence_upper: f64,
}

impl LossPropertyReport {
    /// Lipschitz and convex always hold; this adds the derivative and sign conditions.
    pub fn all_conditions_hold(&self) -> bool {
        self.derivative_condition_holds && self.nonnegativity_condition_holds
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(taus: &[f64], eps: &[f64]) -> LossSpec {
        LossSpec::new(taus.to_vec(), eps.to_vec()).unwrap()
    }

    fn brute_max(pieces: &[AffinePiece], u: f64) -> f64 {
        pieces.iter().map(|p| p.slope * u + p.intercept).fold(f64::NEG_INFINITY, f64::max)
    }

    #[test]
    fn hinge_values() {
        let h = spec(&[0.0, 0.0], &[0.0, 0.0]);
        assert_eq!(h.eval(2.0).unwrap(), 2.0);
        assert_eq!(h.eval(-1.0).unwrap(), 0.0);
    }

    #[test]
    fn pinball_value() {
        assert_eq!(spec(&[0.5], &[0.0]).eval(-2.0).unwrap(), 1.0);
    }

    #[test]
    fn three_piece_value_matches_brute_force() {
        let s = spec(&[-0.45, 0.50], &[0.0, -7.0]);
        let pieces = [
            AffinePiece::new(1.0, 0.0),
            AffinePiece::new(0.45, 0.0),
            AffinePiece::new(-0.5, -7.0),
        ];
        // max(10, 4.5, -12)
        assert_eq!(brute_max(&pieces, 10.0), 10.0);
        assert_eq!(s.eval(10.0).unwrap(), 10.0);
    }

    #[test]
    fn non_finite_argument_rejected() {
        let h = LossSpec::hinge(2);
        assert!(matches!(h.eval(f64::NAN), Err(LossError::NonFiniteArgument(_))));
        assert!(h.eval(f64::INFINITY).is_err());
        assert!(h.subgradient(f64::NEG_INFINITY).is_err());
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(matches!(
            LossSpec::new(vec![0.0], vec![]),
            Err(LossError::LengthMismatch { .. })
        ));
        assert!(LossSpec::new(vec![f64::NAN], vec![0.0]).is_err());
        assert!(LossSpec::new(vec![0.0], vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn subgradients() {
        let h = LossSpec::hinge(2);
        assert_eq!(h.subgradient(1.0).unwrap(), SlopeInterval { lo: 1.0, hi: 1.0 });
        assert_eq!(h.subgradient(0.0).unwrap(), SlopeInterval { lo: 0.0, hi: 1.0 });
        let p = spec(&[0.5], &[0.0]);
        assert_eq!(p.subgradient(0.0).unwrap(), SlopeInterval { lo: -0.5, hi: 1.0 });
    }

    #[test]
    fn hinge_properties() {
        let r = LossSpec::hinge(2).check_properties();
        assert_eq!(r.lipschitz_constant, 1.0);
        assert!(r.derivative_condition_holds);
        assert!(r.nonnegativity_condition_holds);
        assert_eq!((r.influence_lower, r.influence_upper), (0.0, 1.0));
        assert_eq!(r.minimum_value, 0.0);
    }

    #[test]
    fn pinball_properties() {
        let r = spec(&[0.5], &[0.0]).check_properties();
        assert_eq!(r.lipschitz_constant, 1.0);
        assert!(r.all_conditions_hold());
        assert_eq!((r.influence_lower, r.influence_upper), (-0.5, 1.0));
    }

    #[test]
    fn steep_negative_tau_properties() {
        let s = spec(&[-2.0], &[0.0]);
        let r = s.check_properties();
        assert_eq!(r.lipschitz_constant, 2.0);
        // Slope set {1, 2} by enumeration.
        let slopes = [1.0, 2.0];
        let lo = slopes.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = slopes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!((r.influence_lower, r.influence_upper), (lo, hi));
        // Both slopes positive: unbounded below, and eps/(1+tau) = 0 / -1 = -0.
        assert_eq!(r.minimum_value, f64::NEG_INFINITY);
    }

    #[test]
    fn derivative_condition_detects_flat_at_one() {
        // max(u, 3) is flat at u = 1.
        let s = spec(&[0.0], &[3.0]);
        let r = s.check_properties();
        assert!(!r.derivative_condition_holds);
        // tau = 0 pieces are excluded from the algebraic criterion.
        assert!(r.derivative_algebraic_holds);
    }

    #[test]
    fn tau_minus_one_is_skipped_and_flagged() {
        let s = spec(&[-1.0, 0.0], &[-5.0, 0.0]);
        let r = s.check_properties();
        assert_eq!(r.nonnegativity_skipped_pieces, vec![1]);
    }

    #[test]
    fn negative_values_fail_nonnegativity() {
        let s = spec(&[0.5, 0.0], &[-1.0, -1.0]);
        let r = s.check_properties();
        assert!(!r.nonnegativity_condition_holds);
        assert!(r.minimum_value < 0.0);
    }

    #[test]
    fn from_pieces_identity_only() {
        let s = LossSpec::from_pieces(&[AffinePiece::IDENTITY]).unwrap();
        assert_eq!(s.k(), 1);
        assert_eq!(s.eval(-3.0).unwrap(), -3.0);
    }

    #[test]
    fn padding_keeps_the_function() {
        let pin = LossSpec::pinball(-0.6).unwrap();
        let padded = pin.padded(3);
        assert_eq!(padded, spec(&[-0.6, -0.6], &[0.0, 0.0]));
        assert_eq!(padded.canonical_key(), pin.canonical_key());
        assert_eq!(LossSpec::hinge(2).padded(3), LossSpec::hinge(3));
        let id = LossSpec::identity().padded(2);
        assert_eq!(id.k(), 2);
        assert_eq!(id.canonical_key(), LossSpec::identity().canonical_key());
    }

    #[test]
    fn from_pieces_hinge() {
        let s = LossSpec::from_pieces(&[AffinePiece::new(1.0, 0.0), AffinePiece::new(0.0, 0.0)])
            .unwrap();
        assert_eq!(s, spec(&[0.0], &[0.0]));
    }

    #[test]
    fn from_pieces_figure_parameters() {
        let pieces = [
            AffinePiece::new(1.0, 0.0),
            AffinePiece::new(0.45, 0.0),
            AffinePiece::new(-0.5, -7.0),
        ];
        let s = LossSpec::from_pieces(&pieces).unwrap();
        assert_eq!(s, spec(&[-0.45, 0.5], &[0.0, -7.0]));
        let mut state = 0x2545_f491_4f6c_dd1d_u64;
        for _ in 0..1000 {
            // xorshift; keeps the oracle free of the crate's own helpers
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            let u = (state as f64 / u64::MAX as f64) * 200.0 - 100.0;
            assert_eq!(s.eval(u).unwrap(), brute_max(&pieces, u));
        }
    }

    #[test]
    fn from_pieces_requires_identity() {
        let err = LossSpec::from_pieces(&[AffinePiece::new(0.5, 0.0)]).unwrap_err();
        assert_eq!(err, LossError::MissingIdentity);
        assert_eq!(LossSpec::from_pieces(&[]).unwrap_err(), LossError::EmptyPieces);
    }

    #[test]
    fn from_pieces_drops_exact_duplicates() {
        let p = AffinePiece::new(0.0, 0.0);
        let s = LossSpec::from_pieces(&[AffinePiece::IDENTITY, p, p, AffinePiece::IDENTITY])
            .unwrap();
        assert_eq!(s.k(), 2);
    }

    #[test]
    fn envelope_drops_inert_and_duplicate_pieces() {
        // u - 5 never beats u.
        let s = spec(&[0.2, -1.0], &[0.5, -5.0]);
        assert_eq!(s.canonical(), spec(&[0.2], &[0.5]));
        let dup = spec(&[0.3, 0.3], &[1.0, 1.0]);
        assert_eq!(dup.canonical_key(), spec(&[0.3], &[1.0]).canonical_key());
        let zeros = LossSpec::hinge(3);
        assert_eq!(zeros.canonical_key(), LossSpec::hinge(2).canonical_key());
    }

    #[test]
    fn envelope_matches_pointwise_max() {
        let s = spec(&[-2.0, 0.2, 0.9], &[-4.0, 0.0, 3.0]);
        let c = s.canonical();
        for i in -400..=400 {
            let u = i as f64 * 0.05;
            assert_eq!(s.value(u), c.value(u), "u = {u}");
        }
    }

    #[test]
    fn breakpoints_of_hinge_and_pinball() {
        assert_eq!(LossSpec::hinge(2).breakpoints(), vec![0.0]);
        assert_eq!(spec(&[0.5], &[1.5]).breakpoints(), vec![1.0]);
    }

    #[test]
    fn serde_validates() {
        let s = spec(&[0.4, 0.0], &[0.0, 0.0]);
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<LossSpec>(&json).unwrap(), s);
        assert!(serde_json::from_str::<LossSpec>(r#"{"taus":[1.0],"epsilons":[]}"#).is_err());
    }
}
