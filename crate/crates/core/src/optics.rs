//! Optical-element transformations and circuit composition.
//!
//! All elements act linearly on [`PureState`]s and are identity on photons in
//! modes they are not wired to. The 50:50 beam splitter uses the real Hadamard
//! convention: a photon entering `in2` picks up a minus sign on the `out2`
//! output. Routing a photon into a mode already occupied within the same ket
//! is rejected as element misuse; bosonic bunching is outside this model.

use std::collections::BTreeSet;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::state::{BasisKet, PhotonBasis, Polarization, PureState, INV_SQRT_2, ONE};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Element {
    /// Polarizing beam splitter: H transmits, V reflects.
    Pbs {
        input: String,
        transmit: String,
        reflect: String,
    },
    /// Half-wave plate at 45°: swaps H and V.
    Hwp { mode: String },
    /// 50:50 beam splitter, real Hadamard convention.
    Bs {
        in1: String,
        in2: String,
        out1: String,
        out2: String,
    },
    /// Fixed delay on one mode.
    Delay { mode: String, amount: u32 },
    /// Polarization-dependent delay (the unbalanced polarization
    /// interferometer): H gains `h`, V gains `v`.
    PolDelay { mode: String, h: u32, v: u32 },
    /// Pockels cell: flips polarization only for photons arriving exactly at
    /// `gate_delay`.
    Pockels { mode: String, gate_delay: u32 },
}

impl Element {
    pub fn wired_modes(&self) -> Vec<&str> {
        match self {
            Element::Pbs {
                input,
                transmit,
                reflect,
            } => vec![input, transmit, reflect],
            Element::Hwp { mode } => vec![mode],
            Element::Bs {
                in1,
                in2,
                out1,
                out2,
            } => vec![in1, in2, out1, out2],
            Element::Delay { mode, .. } => vec![mode],
            Element::PolDelay { mode, .. } => vec![mode],
            Element::Pockels { mode, .. } => vec![mode],
        }
    }

    pub fn apply(&self, s: &PureState) -> Result<PureState> {
        match self {
            Element::Pbs {
                input,
                transmit,
                reflect,
            } => apply_pbs(s, input, transmit, reflect),
            Element::Hwp { mode } => apply_hwp(s, mode),
            Element::Bs {
                in1,
                in2,
                out1,
                out2,
            } => apply_bs(s, in1, in2, out1, out2),
            Element::Delay { mode, amount } => apply_delay(s, mode, *amount),
            Element::PolDelay { mode, h, v } => apply_pol_delay(s, mode, *h, *v),
            Element::Pockels { mode, gate_delay } => apply_pockels(s, mode, *gate_delay),
        }
    }
}

/// Ordered list of elements over a declared mode set.
#[derive(Debug, Clone)]
pub struct Circuit {
    modes: BTreeSet<String>,
    elements: Vec<Element>,
}

impl Circuit {
    pub fn new<I, S>(modes: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Circuit {
            modes: modes.into_iter().map(Into::into).collect(),
            elements: Vec::new(),
        }
    }

    pub fn push(&mut self, element: Element) -> Result<()> {
        for m in element.wired_modes() {
            if !self.modes.contains(m) {
                return Err(Error::UndeclaredMode(m.to_string()));
            }
        }
        self.elements.push(element);
        Ok(())
    }

    pub fn modes(&self) -> &BTreeSet<String> {
        &self.modes
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    /// Left-fold of element applications; failures carry the element index.
    pub fn apply(&self, s: &PureState) -> Result<PureState> {
        for m in s.mode_set() {
            if !self.modes.contains(&m) {
                return Err(Error::UndeclaredMode(m));
            }
        }
        let mut state = s.clone();
        for (index, element) in self.elements.iter().enumerate() {
            state = element.apply(&state).map_err(|e| Error::ElementFailed {
                index,
                source: Box::new(e),
            })?;
        }
        Ok(state)
    }
}

fn collision_checked(ket: BasisKet) -> Result<BasisKet> {
    if let Some(mode) = ket.has_mode_collision() {
        return Err(Error::ModeCollision {
            mode: mode.to_string(),
        });
    }
    Ok(ket)
}

/// H → `transmit`, V → `reflect` for photons in `input`.
pub fn apply_pbs(s: &PureState, input: &str, transmit: &str, reflect: &str) -> Result<PureState> {
    s.transform(|ket| {
        let photons = ket
            .photons
            .iter()
            .map(|p| {
                if p.mode == input {
                    let mode = match p.pol {
                        Polarization::H => transmit,
                        Polarization::V => reflect,
                    };
                    PhotonBasis::new(mode, p.pol, p.delay)
                } else {
                    p.clone()
                }
            })
            .collect();
        Ok(vec![(collision_checked(BasisKet::new(photons))?, ONE)])
    })
}

/// Swap H and V for the photon in `mode`.
pub fn apply_hwp(s: &PureState, mode: &str) -> Result<PureState> {
    s.transform(|ket| {
        let photons = ket
            .photons
            .iter()
            .map(|p| {
                if p.mode == mode {
                    PhotonBasis {
                        mode: p.mode.clone(),
                        pol: p.pol.flipped(),
                        delay: p.delay,
                    }
                } else {
                    p.clone()
                }
            })
            .collect();
        Ok(vec![(BasisKet::new(photons), ONE)])
    })
}

/// 50:50 beam splitter. `in1` → (|out1⟩+|out2⟩)/√2, `in2` → (|out1⟩−|out2⟩)/√2.
pub fn apply_bs(
    s: &PureState,
    in1: &str,
    in2: &str,
    out1: &str,
    out2: &str,
) -> Result<PureState> {
    s.transform(|ket| {
        let mut expansion: Vec<(Vec<PhotonBasis>, Complex64)> =
            vec![(ket.photons.clone(), ONE)];
        for idx in 0..ket.photons.len() {
            let mode = &ket.photons[idx].mode;
            if mode != in1 && mode != in2 {
                continue;
            }
            let second_port = mode == in2;
            let mut next = Vec::with_capacity(expansion.len() * 2);
            for (photons, factor) in &expansion {
                for (out, sign) in [(out1, 1.0), (out2, if second_port { -1.0 } else { 1.0 })] {
                    let mut photons = photons.clone();
                    photons[idx].mode = out.to_string();
                    next.push((photons, factor * INV_SQRT_2 * sign));
                }
            }
            expansion = next;
        }
        expansion
            .into_iter()
            .map(|(photons, f)| Ok((collision_checked(BasisKet::new(photons))?, f)))
            .collect()
    })
}

/// Add `amount` units of delay to the photon in `mode`.
pub fn apply_delay(s: &PureState, mode: &str, amount: u32) -> Result<PureState> {
    s.transform(|ket| {
        let photons = ket
            .photons
            .iter()
            .map(|p| {
                if p.mode == mode {
                    PhotonBasis {
                        mode: p.mode.clone(),
                        pol: p.pol,
                        delay: p.delay + amount,
                    }
                } else {
                    p.clone()
                }
            })
            .collect();
        Ok(vec![(BasisKet::new(photons), ONE)])
    })
}

/// Polarization-conditional delay: H gains `h`, V gains `v`. Deterministic
/// relabeling, no amplitude splitting.
pub fn apply_pol_delay(s: &PureState, mode: &str, h: u32, v: u32) -> Result<PureState> {
    s.transform(|ket| {
        let photons = ket
            .photons
            .iter()
            .map(|p| {
                if p.mode == mode {
                    let add = match p.pol {
                        Polarization::H => h,
                        Polarization::V => v,
                    };
                    PhotonBasis {
                        mode: p.mode.clone(),
                        pol: p.pol,
                        delay: p.delay + add,
                    }
                } else {
                    p.clone()
                }
            })
            .collect();
        Ok(vec![(BasisKet::new(photons), ONE)])
    })
}

/// Flip H↔V for the photon in `mode` when its delay equals `gate_delay`.
pub fn apply_pockels(s: &PureState, mode: &str, gate_delay: u32) -> Result<PureState> {
    s.transform(|ket| {
        let photons = ket
            .photons
            .iter()
            .map(|p| {
                if p.mode == mode && p.delay == gate_delay {
                    PhotonBasis {
                        mode: p.mode.clone(),
                        pol: p.pol.flipped(),
                        delay: p.delay,
                    }
                } else {
                    p.clone()
                }
            })
            .collect();
        Ok(vec![(BasisKet::new(photons), ONE)])
    })
}
