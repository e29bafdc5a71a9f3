//! Sparse complex-amplitude algebra for few-photon states.
//!
//! A photon carries three degrees of freedom here: a spatial mode label, a
//! polarization, and an integer time-bin delay (in units of the interferometer
//! imbalance; the short arm contributes 0, the long arm 1). Photons are
//! distinguishable by index, so a [`BasisKet`] is an ordered list with one
//! entry per photon and a [`PureState`] is a sparse map from kets to complex
//! amplitudes. Mixed states are probability-weighted [`Ensemble`]s of pure
//! states.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Absolute tolerance for norm, probability, and fidelity comparisons.
pub const TOL: f64 = 1e-12;
/// Amplitudes below this magnitude are dropped from sparse states.
pub const PRUNE_EPS: f64 = 1e-15;

pub(crate) const ONE: Complex64 = Complex64::new(1.0, 0.0);
pub(crate) const INV_SQRT_2: Complex64 = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Polarization {
    H,
    V,
}

impl Polarization {
    pub fn flipped(self) -> Self {
        match self {
            Polarization::H => Polarization::V,
            Polarization::V => Polarization::H,
        }
    }
}

impl fmt::Display for Polarization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Polarization::H => write!(f, "H"),
            Polarization::V => write!(f, "V"),
        }
    }
}

/// Classical label of a single photon: spatial mode, polarization, delay.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PhotonBasis {
    pub mode: String,
    pub pol: Polarization,
    pub delay: u32,
}

impl PhotonBasis {
    pub fn new(mode: &str, pol: Polarization, delay: u32) -> Self {
        PhotonBasis {
            mode: mode.to_string(),
            pol,
            delay,
        }
    }
}

impl fmt::Display for PhotonBasis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "|{},{}⟩_{}", self.pol, self.delay, self.mode)
    }
}

/// One multi-photon basis ket; entry `i` describes photon `i`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BasisKet {
    pub photons: Vec<PhotonBasis>,
}

impl BasisKet {
    pub fn new(photons: Vec<PhotonBasis>) -> Self {
        BasisKet { photons }
    }

    pub fn photon_count(&self) -> usize {
        self.photons.len()
    }

    pub fn modes(&self) -> impl Iterator<Item = &str> {
        self.photons.iter().map(|p| p.mode.as_str())
    }

    /// True when two photons occupy the same spatial mode.
    pub fn has_mode_collision(&self) -> Option<&str> {
        for (i, a) in self.photons.iter().enumerate() {
            for b in &self.photons[i + 1..] {
                if a.mode == b.mode {
                    return Some(a.mode.as_str());
                }
            }
        }
        None
    }
}

/// Sparse unit-norm superposition over [`BasisKet`]s.
#[derive(Debug, Clone, PartialEq)]
pub struct PureState {
    terms: BTreeMap<BasisKet, Complex64>,
    photon_count: usize,
}

impl PureState {
    /// Build a state from `(ket, amplitude)` pairs. Duplicate kets are summed,
    /// negligible amplitudes pruned, and the result must be unit norm.
    pub fn from_terms<I>(terms: I) -> Result<Self>
    where
        I: IntoIterator<Item = (BasisKet, Complex64)>,
    {
        let mut map: BTreeMap<BasisKet, Complex64> = BTreeMap::new();
        for (ket, amp) in terms {
            *map.entry(ket).or_insert(Complex64::new(0.0, 0.0)) += amp;
        }
        map.retain(|_, amp| amp.norm() > PRUNE_EPS);
        if map.is_empty() {
            return Err(Error::EmptyState);
        }
        let photon_count = map.keys().next().unwrap().photon_count();
        if map.keys().any(|k| k.photon_count() != photon_count) {
            return Err(Error::InternalConsistency(
                "kets with differing photon counts in one state".into(),
            ));
        }
        let state = PureState {
            terms: map,
            photon_count,
        };
        let n2 = state.norm_sq();
        if (n2 - 1.0).abs() > TOL {
            return Err(Error::NotNormalized { norm_sq: n2 });
        }
        Ok(state)
    }

    /// Single-ket state with amplitude 1.
    pub fn basis(ket: BasisKet) -> Self {
        let photon_count = ket.photon_count();
        let mut terms = BTreeMap::new();
        terms.insert(ket, ONE);
        PureState {
            terms,
            photon_count,
        }
    }

    pub fn photon_count(&self) -> usize {
        self.photon_count
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&BasisKet, Complex64)> {
        self.terms.iter().map(|(k, a)| (k, *a))
    }

    pub fn amplitude(&self, ket: &BasisKet) -> Complex64 {
        self.terms
            .get(ket)
            .copied()
            .unwrap_or(Complex64::new(0.0, 0.0))
    }

    pub fn norm_sq(&self) -> f64 {
        self.terms.values().map(|a| a.norm_sqr()).sum()
    }

    /// All spatial modes appearing in any term.
    pub fn mode_set(&self) -> BTreeSet<String> {
        self.terms
            .keys()
            .flat_map(|k| k.photons.iter().map(|p| p.mode.clone()))
            .collect()
    }

    /// Multiply every amplitude by a unit-modulus phase factor.
    pub fn scaled_phase(&self, phase: Complex64) -> Self {
        PureState {
            terms: self
                .terms
                .iter()
                .map(|(k, a)| (k.clone(), a * phase))
                .collect(),
            photon_count: self.photon_count,
        }
    }

    /// Apply a linear map given by its action on basis kets. The map must be
    /// norm-preserving; each output entry is `(ket', matrix element)`.
    pub fn transform<F>(&self, f: F) -> Result<Self>
    where
        F: Fn(&BasisKet) -> Result<Vec<(BasisKet, Complex64)>>,
    {
        let mut map: BTreeMap<BasisKet, Complex64> = BTreeMap::new();
        for (ket, amp) in &self.terms {
            for (ket2, factor) in f(ket)? {
                *map.entry(ket2).or_insert(Complex64::new(0.0, 0.0)) += amp * factor;
            }
        }
        map.retain(|_, amp| amp.norm() > PRUNE_EPS);
        if map.is_empty() {
            return Err(Error::EmptyState);
        }
        let state = PureState {
            terms: map,
            photon_count: self.photon_count,
        };
        let n2 = state.norm_sq();
        if (n2 - 1.0).abs() > TOL {
            return Err(Error::NotNormalized { norm_sq: n2 });
        }
        Ok(state)
    }

    /// Product state of two states on disjoint mode sets; photon indices of
    /// `other` follow those of `self`.
    pub fn tensor(&self, other: &Self) -> Result<Self> {
        let mine = self.mode_set();
        for m in other.mode_set() {
            if mine.contains(&m) {
                return Err(Error::OverlappingModes(m));
            }
        }
        let mut terms = Vec::new();
        for (ka, aa) in &self.terms {
            for (kb, ab) in &other.terms {
                let mut photons = ka.photons.clone();
                photons.extend(kb.photons.iter().cloned());
                terms.push((BasisKet::new(photons), aa * ab));
            }
        }
        PureState::from_terms(terms)
    }

    /// ⟨self|other⟩.
    pub fn inner(&self, other: &Self) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for (ket, amp) in &self.terms {
            if let Some(b) = other.terms.get(ket) {
                acc += amp.conj() * b;
            }
        }
        acc
    }

    /// |⟨self|other⟩|²; requires matching photon counts and mode sets.
    pub fn fidelity(&self, other: &Self) -> Result<f64> {
        if self.photon_count != other.photon_count || self.mode_set() != other.mode_set() {
            return Err(Error::MismatchedStates);
        }
        Ok(self.inner(other).norm_sqr())
    }

    /// Condition on photon `i` sitting in mode `assignment[i]`. Returns the
    /// branch probability and the renormalized conditional state; a
    /// zero-probability branch yields `None`.
    pub fn project_modes(&self, assignment: &[&str]) -> (f64, Option<PureState>) {
        let matching: Vec<(&BasisKet, Complex64)> = self
            .terms
            .iter()
            .filter(|(k, _)| {
                k.photons
                    .iter()
                    .zip(assignment)
                    .all(|(p, m)| p.mode == *m)
            })
            .map(|(k, a)| (k, *a))
            .collect();
        let prob: f64 = matching.iter().map(|(_, a)| a.norm_sqr()).sum();
        if prob <= TOL {
            return (0.0, None);
        }
        let scale = Complex64::new(1.0 / prob.sqrt(), 0.0);
        let state = PureState {
            terms: matching
                .into_iter()
                .map(|(k, a)| (k.clone(), a * scale))
                .collect(),
            photon_count: self.photon_count,
        };
        (prob, Some(state))
    }

    /// Remove the global phase: the amplitude of the lexicographically
    /// smallest ket becomes real and positive.
    pub fn canonical_phase(&self) -> Self {
        let (_, amp) = self.terms.iter().next().expect("state is never empty");
        let phase = amp.conj() / amp.norm();
        self.scaled_phase(phase)
    }

    /// Combine a polarization-only state with a time-bin superposition on the
    /// same photons. `patterns` lists `(per-photon delay increments, amplitude)`
    /// and must itself be unit norm.
    pub fn attach_timebin(&self, patterns: &[(Vec<u32>, Complex64)]) -> Result<Self> {
        let total: f64 = patterns.iter().map(|(_, a)| a.norm_sqr()).sum();
        if (total - 1.0).abs() > TOL {
            return Err(Error::NotNormalized { norm_sq: total });
        }
        if patterns.iter().any(|(d, _)| d.len() != self.photon_count) {
            return Err(Error::InternalConsistency(
                "delay pattern length does not match photon count".into(),
            ));
        }
        let mut terms = Vec::new();
        for (ket, amp) in &self.terms {
            for (delays, pamp) in patterns {
                let photons = ket
                    .photons
                    .iter()
                    .zip(delays)
                    .map(|(p, d)| PhotonBasis {
                        mode: p.mode.clone(),
                        pol: p.pol,
                        delay: p.delay + d,
                    })
                    .collect();
                terms.push((BasisKet::new(photons), amp * pamp));
            }
        }
        PureState::from_terms(terms)
    }

    /// Pauli-Z on the polarization of the photon sitting in `mode`.
    pub fn phase_flip_mode(&self, mode: &str) -> Self {
        self.pauli(|p| p.mode == mode, false, true)
    }

    /// Pauli-Z on the polarization of photon `idx`.
    pub fn phase_flip_photon(&self, idx: usize) -> Self {
        self.pauli_idx(idx, false, true)
    }

    /// Pauli-X on the polarization of photon `idx`.
    pub fn bit_flip_photon(&self, idx: usize) -> Self {
        self.pauli_idx(idx, true, false)
    }

    fn pauli<P>(&self, select: P, flip: bool, phase: bool) -> Self
    where
        P: Fn(&PhotonBasis) -> bool,
    {
        let terms = self
            .terms
            .iter()
            .map(|(ket, amp)| {
                let mut amp = *amp;
                let photons = ket
                    .photons
                    .iter()
                    .map(|p| {
                        if select(p) {
                            if phase && p.pol == Polarization::V {
                                amp = -amp;
                            }
                            PhotonBasis {
                                mode: p.mode.clone(),
                                pol: if flip { p.pol.flipped() } else { p.pol },
                                delay: p.delay,
                            }
                        } else {
                            p.clone()
                        }
                    })
                    .collect();
                (BasisKet::new(photons), amp)
            })
            .collect();
        PureState {
            terms,
            photon_count: self.photon_count,
        }
    }

    fn pauli_idx(&self, idx: usize, flip: bool, phase: bool) -> Self {
        let terms = self
            .terms
            .iter()
            .map(|(ket, amp)| {
                let mut amp = *amp;
                let photons: Vec<PhotonBasis> = ket
                    .photons
                    .iter()
                    .enumerate()
                    .map(|(i, p)| {
                        if i == idx {
                            if phase && p.pol == Polarization::V {
                                amp = -amp;
                            }
                            PhotonBasis {
                                mode: p.mode.clone(),
                                pol: if flip { p.pol.flipped() } else { p.pol },
                                delay: p.delay,
                            }
                        } else {
                            p.clone()
                        }
                    })
                    .collect();
                (BasisKet::new(photons), amp)
            })
            .collect();
        PureState {
            terms,
            photon_count: self.photon_count,
        }
    }

    /// Term-wise approximate equality at absolute tolerance `tol`.
    pub fn approx_eq(&self, other: &Self, tol: f64) -> bool {
        let keys: BTreeSet<&BasisKet> = self.terms.keys().chain(other.terms.keys()).collect();
        keys.into_iter()
            .all(|k| (self.amplitude(k) - other.amplitude(k)).norm() <= tol)
    }
}

/// Probability-weighted mixture of pure states.
#[derive(Debug, Clone)]
pub struct Ensemble {
    components: Vec<(f64, PureState)>,
}

impl Ensemble {
    pub fn new(components: Vec<(f64, PureState)>) -> Result<Self> {
        if components.iter().any(|(w, _)| *w < 0.0) {
            return Err(Error::InvalidWeights("negative weight".into()));
        }
        let components: Vec<(f64, PureState)> =
            components.into_iter().filter(|(w, _)| *w > 0.0).collect();
        if components.is_empty() {
            return Err(Error::InvalidWeights("no components".into()));
        }
        let total: f64 = components.iter().map(|(w, _)| w).sum();
        if (total - 1.0).abs() > TOL {
            return Err(Error::InvalidWeights(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        let n = components[0].1.photon_count();
        if components.iter().any(|(_, s)| s.photon_count() != n) {
            return Err(Error::InvalidWeights(
                "components have differing photon counts".into(),
            ));
        }
        Ok(Ensemble { components })
    }

    pub fn pure(state: PureState) -> Self {
        Ensemble {
            components: vec![(1.0, state)],
        }
    }

    pub fn components(&self) -> &[(f64, PureState)] {
        &self.components
    }

    pub fn photon_count(&self) -> usize {
        self.components[0].1.photon_count()
    }

    pub fn total_weight(&self) -> f64 {
        self.components.iter().map(|(w, _)| w).sum()
    }

    /// Apply a pure-state map component-wise, keeping weights.
    pub fn map<F>(&self, f: F) -> Result<Ensemble>
    where
        F: Fn(&PureState) -> Result<PureState>,
    {
        let components = self
            .components
            .iter()
            .map(|(w, s)| Ok((*w, f(s)?)))
            .collect::<Result<Vec<_>>>()?;
        Ensemble::new(components)
    }

    /// Σ_k w_k · |⟨ψ_k|target⟩|².
    pub fn fidelity_to(&self, target: &PureState) -> Result<f64> {
        let mut acc = 0.0;
        for (w, s) in &self.components {
            acc += w * s.fidelity(target)?;
        }
        Ok(acc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BellKind {
    PhiPlus,
    PhiMinus,
    PsiPlus,
    PsiMinus,
}

impl BellKind {
    pub const ALL: [BellKind; 4] = [
        BellKind::PhiPlus,
        BellKind::PhiMinus,
        BellKind::PsiPlus,
        BellKind::PsiMinus,
    ];

    pub fn label(self) -> &'static str {
        match self {
            BellKind::PhiPlus => "phi_plus",
            BellKind::PhiMinus => "phi_minus",
            BellKind::PsiPlus => "psi_plus",
            BellKind::PsiMinus => "psi_minus",
        }
    }
}

impl fmt::Display for BellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Two-photon polarization Bell state on the given modes, both photons in the
/// same time bin.
pub fn bell_state(kind: BellKind, modes: (&str, &str), delay: u32) -> Result<PureState> {
    if modes.0 == modes.1 {
        return Err(Error::DuplicateMode(modes.0.to_string()));
    }
    use Polarization::{H, V};
    let ket = |p0: Polarization, p1: Polarization| {
        BasisKet::new(vec![
            PhotonBasis::new(modes.0, p0, delay),
            PhotonBasis::new(modes.1, p1, delay),
        ])
    };
    let (pols, sign) = match kind {
        BellKind::PhiPlus => (((H, H), (V, V)), 1.0),
        BellKind::PhiMinus => (((H, H), (V, V)), -1.0),
        BellKind::PsiPlus => (((H, V), (V, H)), 1.0),
        BellKind::PsiMinus => (((H, V), (V, H)), -1.0),
    };
    let ((a0, a1), (b0, b1)) = pols;
    PureState::from_terms(vec![
        (ket(a0, a1), INV_SQRT_2),
        (ket(b0, b1), INV_SQRT_2 * sign),
    ])
}

/// n-photon polarization GHZ state (|H…H⟩+|V…V⟩)/√2 on the given modes.
pub fn ghz_state(modes: &[&str], delay: u32) -> Result<PureState> {
    let set: BTreeSet<&str> = modes.iter().copied().collect();
    if set.len() != modes.len() {
        return Err(Error::DuplicateMode("repeated GHZ mode".into()));
    }
    let ket = |pol: Polarization| {
        BasisKet::new(
            modes
                .iter()
                .map(|m| PhotonBasis::new(m, pol, delay))
                .collect(),
        )
    };
    PureState::from_terms(vec![
        (ket(Polarization::H), INV_SQRT_2),
        (ket(Polarization::V), INV_SQRT_2),
    ])
}
