//! Noise models applied between the encoder and the purifier.
//!
//! Three channels are provided: the Bell-diagonal polarization channel, a
//! collective phase channel in which each transmission path imprints one
//! phase on both time bins, and an adversarial time-bin dephasing channel
//! that applies a differential phase per unit of delay. A time-bin bit-flip
//! channel is deliberately absent from the registry: photons share the same
//! transmission speed, so early/late swaps have no physical mechanism here.

use std::collections::BTreeMap;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::state::{Ensemble, PureState, TOL};

/// Names of the channels this module exposes.
pub const CHANNEL_REGISTRY: &[&str] = &["bell_diagonal", "collective_phase", "timebin_dephasing"];

pub fn channel_registry() -> &'static [&'static str] {
    CHANNEL_REGISTRY
}

/// Distribution of the per-side transmission phases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseDist {
    /// No phase noise.
    Zero,
    /// Independent uniform draws over [0, 2π) per side.
    Uniform,
}

impl PhaseDist {
    pub fn label(self) -> &'static str {
        match self {
            PhaseDist::Zero => "zero",
            PhaseDist::Uniform => "uniform",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(PhaseDist::Zero),
            "uniform" => Ok(PhaseDist::Uniform),
            other => Err(Error::Config(format!(
                "unknown theta distribution `{other}` (expected zero|uniform)"
            ))),
        }
    }
}

/// Bell-diagonal channel weights. `f` keeps the polarization pair intact,
/// `a` phase-flips the second photon, `b` bit-flips it, `c` does both.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseParams {
    pub f: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl NoiseParams {
    pub fn new(f: f64, a: f64, b: f64, c: f64) -> Result<Self> {
        let p = NoiseParams { f, a, b, c };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("F", self.f), ("a", self.a), ("b", self.b), ("c", self.c)] {
            if !(0.0..=1.0 + TOL).contains(&w) || w.is_nan() {
                return Err(Error::InvalidNoiseParams(format!(
                    "{name} = {w} is not a probability"
                )));
            }
        }
        let total = self.f + self.a + self.b + self.c;
        if (total - 1.0).abs() > TOL {
            return Err(Error::InvalidNoiseParams(format!(
                "F+a+b+c = {total}, expected 1"
            )));
        }
        Ok(())
    }

    pub fn noiseless() -> Self {
        NoiseParams {
            f: 1.0,
            a: 0.0,
            b: 0.0,
            c: 0.0,
        }
    }

    pub fn uniform() -> Self {
        NoiseParams {
            f: 0.25,
            a: 0.25,
            b: 0.25,
            c: 0.25,
        }
    }

    pub fn weights(&self) -> [f64; 4] {
        [self.f, self.a, self.b, self.c]
    }
}

/// Split every component of `e` into the four Pauli branches on the
/// polarization of photon `pair.1`, weighted by the channel parameters.
/// Delays and mode labels are never touched.
pub fn bell_diagonal_channel(
    e: &Ensemble,
    p: &NoiseParams,
    pair: (usize, usize),
) -> Result<Ensemble> {
    p.validate()?;
    let n = e.photon_count();
    if pair.0 >= n || pair.1 >= n || pair.0 == pair.1 {
        return Err(Error::InvalidNoiseParams(format!(
            "photon pair ({}, {}) invalid for {n}-photon ensemble",
            pair.0, pair.1
        )));
    }
    let target = pair.1;
    let mut components = Vec::new();
    for (w, s) in e.components() {
        for (weight, flipped) in [
            (p.f, s.clone()),
            (p.a, s.phase_flip_photon(target)),
            (p.b, s.bit_flip_photon(target)),
            (p.c, s.phase_flip_photon(target).bit_flip_photon(target)),
        ] {
            if weight > 0.0 {
                components.push((w * weight, flipped));
            }
        }
    }
    Ensemble::new(components)
}

/// Imprint one phase per transmission path: every photon in mode `m`
/// multiplies the amplitude by e^{iθ(m)}, independent of its time bin.
pub fn collective_phase_channel(s: &PureState, thetas: &BTreeMap<String, f64>) -> PureState {
    let terms = s
        .terms()
        .map(|(ket, amp)| {
            let total: f64 = ket
                .photons
                .iter()
                .map(|p| thetas.get(&p.mode).copied().unwrap_or(0.0))
                .sum();
            (ket.clone(), amp * Complex64::from_polar(1.0, total))
        })
        .collect::<Vec<_>>();
    PureState::from_terms(terms).expect("phase channel preserves norm")
}

/// Differential time-bin phase on photon `photon`: amplitude gains
/// e^{iφ·delay}. With φ = 0 this is the identity.
pub fn timebin_dephasing_pure(s: &PureState, phi: f64, photon: usize) -> PureState {
    let terms = s
        .terms()
        .map(|(ket, amp)| {
            let d = ket.photons[photon].delay as f64;
            (ket.clone(), amp * Complex64::from_polar(1.0, phi * d))
        })
        .collect::<Vec<_>>();
    PureState::from_terms(terms).expect("dephasing preserves norm")
}

/// Ensemble form of [`timebin_dephasing_pure`], acting on the second photon.
pub fn timebin_dephasing_channel(e: &Ensemble, phi: f64) -> Ensemble {
    e.map(|s| Ok(timebin_dephasing_pure(s, phi, 1)))
        .expect("dephasing preserves weights")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::{bell_state, BellKind, PhotonBasis, Polarization, PureState, INV_SQRT_2};
    use crate::state::BasisKet;

    fn phi_plus_with_timebin() -> PureState {
        bell_state(BellKind::PhiPlus, ("a1", "a2"), 0)
            .unwrap()
            .attach_timebin(&[(vec![0, 0], INV_SQRT_2), (vec![1, 1], INV_SQRT_2)])
            .unwrap()
    }

    fn timebin_pair() -> PureState {
        use Polarization::H;
        PureState::from_terms(vec![
            (
                BasisKet::new(vec![
                    PhotonBasis::new("a1", H, 0),
                    PhotonBasis::new("a2", H, 0),
                ]),
                INV_SQRT_2,
            ),
            (
                BasisKet::new(vec![
                    PhotonBasis::new("a1", H, 1),
                    PhotonBasis::new("a2", H, 1),
                ]),
                INV_SQRT_2,
            ),
        ])
        .unwrap()
    }

    #[test]
    fn noiseless_channel_is_identity() {
        let input = Ensemble::pure(phi_plus_with_timebin());
        let out = bell_diagonal_channel(&input, &NoiseParams::noiseless(), (0, 1)).unwrap();
        assert_eq!(out.components().len(), 1);
        assert!(out.components()[0]
            .1
            .approx_eq(&phi_plus_with_timebin(), TOL));
    }

    #[test]
    fn channel_produces_bell_diagonal_ensemble() {
        let p = NoiseParams::new(0.55, 0.2, 0.15, 0.1).unwrap();
        let input = Ensemble::pure(phi_plus_with_timebin());
        let out = bell_diagonal_channel(&input, &p, (0, 1)).unwrap();
        assert_eq!(out.components().len(), 4);
        assert!((out.total_weight() - 1.0).abs() < TOL);

        let expect = |kind| {
            bell_state(kind, ("a1", "a2"), 0)
                .unwrap()
                .attach_timebin(&[(vec![0, 0], INV_SQRT_2), (vec![1, 1], INV_SQRT_2)])
                .unwrap()
        };
        let expected = [
            (p.f, expect(BellKind::PhiPlus)),
            (p.a, expect(BellKind::PhiMinus)),
            (p.b, expect(BellKind::PsiPlus)),
            (p.c, expect(BellKind::PsiMinus)),
        ];
        for ((w, s), (we, se)) in out.components().iter().zip(&expected) {
            assert!((w - we).abs() < TOL);
            assert!(s.canonical_phase().approx_eq(&se.canonical_phase(), TOL));
        }

        let target = expect(BellKind::PhiPlus);
        assert!((out.fidelity_to(&target).unwrap() - p.f).abs() < TOL);
    }

    #[test]
    fn channel_never_touches_delays_or_modes() {
        let p = NoiseParams::uniform();
        let input = Ensemble::pure(phi_plus_with_timebin());
        let out = bell_diagonal_channel(&input, &p, (0, 1)).unwrap();
        for (_, s) in out.components() {
            for (ket, _) in s.terms() {
                assert_eq!(ket.photons[0].mode, "a1");
                assert_eq!(ket.photons[1].mode, "a2");
                assert_eq!(ket.photons[0].delay, ket.photons[1].delay);
            }
        }
    }

    #[test]
    fn channel_rejects_bad_params() {
        assert!(NoiseParams::new(0.7, 0.7, 0.0, 0.0).is_err());
        assert!(NoiseParams::new(-0.1, 0.6, 0.3, 0.2).is_err());
        let input = Ensemble::pure(phi_plus_with_timebin());
        let bad = NoiseParams {
            f: 0.9,
            a: 0.9,
            b: 0.0,
            c: 0.0,
        };
        assert!(bell_diagonal_channel(&input, &bad, (0, 1)).is_err());
        assert!(bell_diagonal_channel(&input, &NoiseParams::noiseless(), (0, 0)).is_err());
    }

    #[test]
    fn collective_phase_is_global() {
        let s = timebin_pair();
        let mut thetas = BTreeMap::new();
        thetas.insert("a1".to_string(), 0.7);
        thetas.insert("a2".to_string(), 1.1);
        let out = collective_phase_channel(&s, &thetas);
        assert!((out.fidelity(&s).unwrap() - 1.0).abs() < TOL);
        let expected = s.scaled_phase(Complex64::from_polar(1.0, 1.8));
        assert!(out.approx_eq(&expected, TOL));

        let id = collective_phase_channel(&s, &BTreeMap::new());
        assert!(id.approx_eq(&s, TOL));
    }

    #[test]
    fn collective_phase_invariance_random_draws() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let s = phi_plus_with_timebin();
        for _ in 0..100 {
            let mut thetas = BTreeMap::new();
            thetas.insert("a1".to_string(), rng.gen::<f64>() * std::f64::consts::TAU);
            thetas.insert("a2".to_string(), rng.gen::<f64>() * std::f64::consts::TAU);
            let out = collective_phase_channel(&s, &thetas);
            assert!((out.fidelity(&s).unwrap() - 1.0).abs() < TOL);
        }
    }

    #[test]
    fn dephasing_pi_flips_timebin_sign() {
        let s = timebin_pair();
        let out = timebin_dephasing_pure(&s, std::f64::consts::PI, 1);
        assert!((out.fidelity(&s).unwrap()).abs() < TOL);

        let id = timebin_dephasing_pure(&s, 0.0, 1);
        assert!(id.approx_eq(&s, TOL));
    }

    #[test]
    fn registry_has_no_timebin_bit_flip() {
        assert!(channel_registry()
            .iter()
            .all(|name| !name.contains("bit_flip")));
        assert_eq!(channel_registry().len(), 3);
    }
}
