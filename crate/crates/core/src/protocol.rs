//! End-to-end purification pipeline: encoding into time bins, distribution
//! over the four spatial branches, per-branch purification and detection,
//! feed-forward phase correction, Monte Carlo experiments, and the
//! multipartite GHZ extension.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rayon::prelude::*;

use crate::channels::{
    collective_phase_channel, timebin_dephasing_pure, NoiseParams, PhaseDist,
};
use crate::error::{Error, Result};
use crate::optics::{Circuit, Element};
use crate::state::{
    bell_state, ghz_state, BasisKet, BellKind, PhotonBasis, Polarization, PureState, INV_SQRT_2,
    TOL,
};

/// Largest supported party count for the GHZ extension.
pub const MAX_PARTIES: usize = 8;

/// The four spatial branches the encoded pair distributes into. The time-bin
/// relative sign is +1 for `a1a2`/`b1b2` and −1 for the cross branches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Branch {
    A1A2,
    A1B2,
    A2B1,
    B1B2,
}

impl Branch {
    pub const ALL: [Branch; 4] = [Branch::A1A2, Branch::A1B2, Branch::A2B1, Branch::B1B2];

    /// Sign of the |late,late⟩ term relative to |early,early⟩.
    pub fn timebin_sign(self) -> f64 {
        match self {
            Branch::A1A2 | Branch::B1B2 => 1.0,
            Branch::A1B2 | Branch::A2B1 => -1.0,
        }
    }

    /// Spatial modes of (first photon, second photon).
    pub fn modes(self) -> (&'static str, &'static str) {
        match self {
            Branch::A1A2 => ("a1", "a2"),
            Branch::A1B2 => ("a1", "b2"),
            Branch::A2B1 => ("b1", "a2"),
            Branch::B1B2 => ("b1", "b2"),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Branch::A1A2 => "a1a2",
            Branch::A1B2 => "a1b2",
            Branch::A2B1 => "a2b1",
            Branch::B1B2 => "b1b2",
        }
    }
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Branch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "a1a2" => Ok(Branch::A1A2),
            "a1b2" => Ok(Branch::A1B2),
            "a2b1" => Ok(Branch::A2B1),
            "b1b2" => Ok(Branch::B1B2),
            other => Err(Error::Config(format!(
                "unknown branch `{other}` (expected a1a2|a1b2|a2b1|b1b2)"
            ))),
        }
    }
}

/// Which encoder beam-splitter output a party's photon took.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PortChoice {
    A,
    B,
}

impl PortChoice {
    pub fn label(self) -> char {
        match self {
            PortChoice::A => 'a',
            PortChoice::B => 'b',
        }
    }

    /// Sign contributed to the |late…late⟩ term by this output port.
    pub fn sign(self) -> f64 {
        match self {
            PortChoice::A => 1.0,
            PortChoice::B => -1.0,
        }
    }

    /// Spatial mode label for party `i` (0-based).
    pub fn mode(self, party: usize) -> String {
        format!("{}{}", self.label(), party + 1)
    }
}

/// Detector port label, 1-based.
pub fn detector_port(i: usize) -> String {
    format!("D{i}")
}

fn port_index(label: &str) -> usize {
    label[1..].parse().expect("detector labels are D<n>")
}

/// A heralded detection: which ports fired, the surviving polarization state
/// at those ports, and the shared arrival time bin.
#[derive(Debug, Clone)]
pub struct Outcome {
    /// Detector ports, sorted by port number.
    pub pattern: Vec<String>,
    /// Renormalized polarization state at the ports, canonical phase.
    pub heralded: PureState,
    /// Time bin shared by all photons in the heralded state.
    pub common_delay: u32,
}

impl Outcome {
    pub fn pattern_label(&self) -> String {
        self.pattern.concat()
    }
}

/// One Monte Carlo trial.
#[derive(Debug, Clone)]
pub struct TrialRecord {
    pub input_component: BellKind,
    pub branch_label: String,
    pub timebin_sign: f64,
    pub outcome: Outcome,
    pub corrected_fidelity: f64,
}

/// Source-pair state after time-bin encoding: polarization product |H,H⟩,
/// time bins maximally entangled.
pub fn encode_source_pair() -> PureState {
    ghz_encode(2).expect("2 parties is always in range")
}

/// n-party generalization: |H…H⟩ ⊗ (|0…0⟩ + |1…1⟩)/√2 on the source modes.
pub fn ghz_encode(n: usize) -> Result<PureState> {
    if !(2..=MAX_PARTIES).contains(&n) {
        return Err(Error::PartiesOutOfRange(n));
    }
    let ket = |delay: u32| {
        BasisKet::new(
            (0..n)
                .map(|i| PhotonBasis::new(&format!("s{}", i + 1), Polarization::H, delay))
                .collect(),
        )
    };
    PureState::from_terms(vec![(ket(0), INV_SQRT_2), (ket(1), INV_SQRT_2)])
}

/// The encoder of the bipartite protocol as an explicit circuit, from the
/// source input modes to the four distribution modes. Short arms enter the
/// first beam-splitter port, long arms the second; with the real Hadamard
/// convention this places the minus sign on |late,late⟩ exactly in the cross
/// branches.
pub fn encoder_circuit() -> Circuit {
    let mut c = Circuit::new([
        "Ain", "Bin", "As", "Al", "Bs", "Bl", "a1", "b1", "a2", "b2",
    ]);
    let push = |c: &mut Circuit, e| c.push(e).expect("encoder wiring is static");
    push(
        &mut c,
        Element::Pbs {
            input: "Ain".into(),
            transmit: "As".into(),
            reflect: "Al".into(),
        },
    );
    push(
        &mut c,
        Element::Pbs {
            input: "Bin".into(),
            transmit: "Bs".into(),
            reflect: "Bl".into(),
        },
    );
    push(&mut c, Element::Hwp { mode: "Al".into() });
    push(&mut c, Element::Hwp { mode: "Bl".into() });
    push(
        &mut c,
        Element::Delay {
            mode: "Al".into(),
            amount: 1,
        },
    );
    push(
        &mut c,
        Element::Delay {
            mode: "Bl".into(),
            amount: 1,
        },
    );
    push(
        &mut c,
        Element::Bs {
            in1: "As".into(),
            in2: "Al".into(),
            out1: "a1".into(),
            out2: "b1".into(),
        },
    );
    push(
        &mut c,
        Element::Bs {
            in1: "Bs".into(),
            in2: "Bl".into(),
            out1: "a2".into(),
            out2: "b2".into(),
        },
    );
    c
}

/// Full encoder output for the |Φ+⟩ source pair: the eight-term distribution
/// state over the four branches.
pub fn encoded_distribution_state() -> PureState {
    let input = bell_state(BellKind::PhiPlus, ("Ain", "Bin"), 0)
        .expect("distinct source modes");
    encoder_circuit()
        .apply(&input)
        .expect("encoder is unitary on its input")
}

/// Condition the post-beam-splitter state on each of the four branches.
/// Zero-probability branches are retained with `None` states.
pub fn distribute(s: &PureState) -> Vec<(Branch, f64, Option<PureState>)> {
    Branch::ALL
        .iter()
        .map(|&branch| {
            let (ma, mb) = branch.modes();
            let (p, state) = s.project_modes(&[ma, mb]);
            (branch, p, state)
        })
        .collect()
}

/// Analytic branch state: |H,H⟩ ⊗ (|00⟩ + sign·|11⟩)/√2 on the branch modes.
pub fn branch_state(branch: Branch) -> PureState {
    let (ma, mb) = branch.modes();
    let ket = |delay: u32| {
        BasisKet::new(vec![
            PhotonBasis::new(ma, Polarization::H, delay),
            PhotonBasis::new(mb, Polarization::H, delay),
        ])
    };
    PureState::from_terms(vec![
        (ket(0), INV_SQRT_2),
        (ket(1), INV_SQRT_2 * branch.timebin_sign()),
    ])
    .expect("branch state is unit norm")
}

/// Purifier for an arbitrary set of party input modes. Party `i` feeds a PBS
/// whose H output is port `D(i+1)` and V output port `D(n+i+1)`; the V rails
/// carry a half-wave plate; every rail then has a Pockels cell gated on the
/// early bin and a polarization-dependent delay that rejoins the bins.
pub fn purifier_circuit(party_modes: &[&str]) -> Circuit {
    let n = party_modes.len();
    let mut modes: Vec<String> = party_modes.iter().map(|m| m.to_string()).collect();
    let ports: Vec<String> = (1..=2 * n).map(detector_port).collect();
    modes.extend(ports.iter().cloned());
    let mut c = Circuit::new(modes);
    let push = |c: &mut Circuit, e| c.push(e).expect("purifier wiring is static");
    for (i, m) in party_modes.iter().enumerate() {
        push(
            &mut c,
            Element::Pbs {
                input: m.to_string(),
                transmit: detector_port(i + 1),
                reflect: detector_port(n + i + 1),
            },
        );
    }
    for i in 0..n {
        push(
            &mut c,
            Element::Hwp {
                mode: detector_port(n + i + 1),
            },
        );
    }
    for port in &ports {
        push(
            &mut c,
            Element::Pockels {
                mode: port.clone(),
                gate_delay: 0,
            },
        );
    }
    for port in &ports {
        push(
            &mut c,
            Element::PolDelay {
                mode: port.clone(),
                h: 0,
                v: 1,
            },
        );
    }
    c
}

/// Purifier for one bipartite branch (Fig. 2 rail set, reused per branch).
pub fn build_purifier(branch: Branch) -> Circuit {
    let (ma, mb) = branch.modes();
    purifier_circuit(&[ma, mb])
}

/// Group a purifier output state by detector-port pattern. Every photon
/// within a pattern must share one arrival bin; anything else signals an
/// element-model bug.
pub fn classify(out: &PureState) -> Result<Vec<(f64, Outcome)>> {
    let mut groups: BTreeMap<Vec<String>, Vec<(BasisKet, Complex64)>> = BTreeMap::new();
    for (ket, amp) in out.terms() {
        // photon identity is bookkeeping; order detection-side kets by port
        let mut photons = ket.photons.clone();
        photons.sort_by_key(|p| port_index(&p.mode));
        let pattern: Vec<String> = photons.iter().map(|p| p.mode.clone()).collect();
        groups
            .entry(pattern)
            .or_default()
            .push((BasisKet::new(photons), amp));
    }
    let mut outcomes = Vec::new();
    for (pattern, terms) in groups {
        let prob: f64 = terms.iter().map(|(_, a)| a.norm_sqr()).sum();
        let mut delays = terms
            .iter()
            .flat_map(|(k, _)| k.photons.iter().map(|p| p.delay));
        let first = delays.next().expect("group is nonempty");
        if delays.any(|d| d != first) {
            return Err(Error::InternalConsistency(format!(
                "amplitude at mismatched delays within pattern {}",
                pattern.concat()
            )));
        }
        let scale = Complex64::new(1.0 / prob.sqrt(), 0.0);
        let heralded = PureState::from_terms(
            terms.into_iter().map(|(k, a)| (k, a * scale)),
        )?
        .canonical_phase();
        outcomes.push((
            prob,
            Outcome {
                pattern,
                heralded,
                common_delay: first,
            },
        ));
    }
    Ok(outcomes)
}

/// Run the purifier on a branch-conditioned state and return the full
/// pattern distribution.
pub fn detect(s: &PureState, branch: Branch) -> Result<Vec<(f64, Outcome)>> {
    classify(&build_purifier(branch).apply(s)?)
}

/// Like [`detect`], but for inputs with a definite polarization item, where
/// exactly one pattern fires with probability 1.
pub fn purify_and_detect(s: &PureState, branch: Branch) -> Result<Outcome> {
    let mut outcomes = detect(s, branch)?;
    if outcomes.len() != 1 {
        return Err(Error::InternalConsistency(format!(
            "input heralds {} detector patterns; use detect() for superposed inputs",
            outcomes.len()
        )));
    }
    let (p, outcome) = outcomes.pop().unwrap();
    if (p - 1.0).abs() > TOL {
        return Err(Error::InternalConsistency(format!(
            "single pattern fired with probability {p}, expected 1"
        )));
    }
    Ok(outcome)
}

/// Feed-forward correction: a phase flip at the lowest-numbered port when the
/// branch carried the −1 time-bin sign. Any single-port flip is equivalent.
pub fn correct(o: &Outcome, branch: Branch) -> PureState {
    correct_sign(o, branch.timebin_sign())
}

pub fn correct_sign(o: &Outcome, sign: f64) -> PureState {
    if sign < 0.0 {
        o.heralded.phase_flip_mode(&o.pattern[0]).canonical_phase()
    } else {
        o.heralded.clone()
    }
}

/// Branch-conditioned n-party state for a set of encoder output choices:
/// |H…H⟩ ⊗ (|0…0⟩ + sign·|1…1⟩)/√2 where sign is the product of per-party
/// beam-splitter signs.
pub fn ghz_branch_state(choices: &[PortChoice]) -> Result<(f64, PureState)> {
    let n = choices.len();
    if !(2..=MAX_PARTIES).contains(&n) {
        return Err(Error::PartiesOutOfRange(n));
    }
    let sign: f64 = choices.iter().map(|c| c.sign()).product();
    let ket = |delay: u32| {
        BasisKet::new(
            choices
                .iter()
                .enumerate()
                .map(|(i, c)| PhotonBasis::new(&c.mode(i), Polarization::H, delay))
                .collect(),
        )
    };
    let state = PureState::from_terms(vec![
        (ket(0), INV_SQRT_2),
        (ket(1), INV_SQRT_2 * sign),
    ])?;
    Ok((sign, state))
}

/// Apply the per-party purifiers to a branch-conditioned n-party state.
pub fn ghz_purify(s: &PureState, choices: &[PortChoice]) -> Result<Outcome> {
    let modes: Vec<String> = choices
        .iter()
        .enumerate()
        .map(|(i, c)| c.mode(i))
        .collect();
    let refs: Vec<&str> = modes.iter().map(String::as_str).collect();
    let mut outcomes = classify(&purifier_circuit(&refs).apply(s)?)?;
    if outcomes.len() != 1 {
        return Err(Error::InternalConsistency(format!(
            "GHZ input heralds {} detector patterns",
            outcomes.len()
        )));
    }
    let (p, outcome) = outcomes.pop().unwrap();
    if (p - 1.0).abs() > TOL {
        return Err(Error::InternalConsistency(format!(
            "GHZ pattern fired with probability {p}, expected 1"
        )));
    }
    Ok(outcome)
}

/// Experiment parameters shared by the bipartite and GHZ pipelines.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub noise: NoiseParams,
    pub theta_dist: PhaseDist,
    pub dephasing: Option<f64>,
    pub trials: u64,
    pub seed: u64,
    pub parties: usize,
    pub branch: Option<Branch>,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.noise.validate()?;
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if !(2..=MAX_PARTIES).contains(&self.parties) {
            return Err(Error::PartiesOutOfRange(self.parties));
        }
        if self.parties > 2 && self.branch.is_some() {
            return Err(Error::Config(
                "fixed branches apply only to the bipartite pipeline".into(),
            ));
        }
        Ok(())
    }
}

/// Aggregated experiment statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct RunStats {
    pub trials: u64,
    pub success_count: u64,
    pub success_probability: f64,
    pub mean_corrected_fidelity: f64,
    pub pattern_counts: BTreeMap<String, u64>,
    pub branch_counts: BTreeMap<String, u64>,
}

fn sample_bell(noise: &NoiseParams, rng: &mut impl Rng) -> BellKind {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (kind, w) in BellKind::ALL.iter().zip(noise.weights()) {
        acc += w;
        if u < acc {
            return *kind;
        }
    }
    BellKind::PsiMinus
}

fn sample_pattern<'a>(
    outcomes: &'a [(f64, Outcome)],
    rng: &mut impl Rng,
) -> &'a Outcome {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (p, o) in outcomes {
        acc += p;
        if u < acc {
            return o;
        }
    }
    &outcomes.last().expect("at least one outcome").1
}

/// One bipartite trial: draw a Bell component and a branch, transmit through
/// the configured channels, purify, correct, and score against |Φ+⟩.
pub fn run_trial(cfg: &RunConfig, rng: &mut impl Rng) -> Result<TrialRecord> {
    let kind = sample_bell(&cfg.noise, rng);
    let branch = cfg
        .branch
        .unwrap_or_else(|| Branch::ALL[rng.gen_range(0..4)]);
    let (ma, mb) = branch.modes();
    let sign = branch.timebin_sign();
    let mut state = bell_state(kind, (ma, mb), 0)?.attach_timebin(&[
        (vec![0, 0], INV_SQRT_2),
        (vec![1, 1], INV_SQRT_2 * sign),
    ])?;
    if cfg.theta_dist == PhaseDist::Uniform {
        let mut thetas = BTreeMap::new();
        thetas.insert(ma.to_string(), rng.gen::<f64>() * std::f64::consts::TAU);
        thetas.insert(mb.to_string(), rng.gen::<f64>() * std::f64::consts::TAU);
        state = collective_phase_channel(&state, &thetas);
    }
    if let Some(phi) = cfg.dephasing {
        state = timebin_dephasing_pure(&state, phi, 1);
    }
    let outcomes = detect(&state, branch)?;
    let outcome = sample_pattern(&outcomes, rng).clone();
    let corrected = correct(&outcome, branch);
    let ports: Vec<&str> = outcome.pattern.iter().map(String::as_str).collect();
    let target = ghz_state(&ports, outcome.common_delay)?;
    let corrected_fidelity = corrected.fidelity(&target)?;
    Ok(TrialRecord {
        input_component: kind,
        branch_label: branch.label().to_string(),
        timebin_sign: sign,
        outcome,
        corrected_fidelity,
    })
}

/// One GHZ trial: uniform per-party branch choices, Bell-diagonal noise on
/// the (1,2) photon pair, per-party purification, sign correction.
pub fn run_ghz_trial(cfg: &RunConfig, rng: &mut impl Rng) -> Result<TrialRecord> {
    let n = cfg.parties;
    let kind = sample_bell(&cfg.noise, rng);
    let choices: Vec<PortChoice> = (0..n)
        .map(|_| {
            if rng.gen::<bool>() {
                PortChoice::B
            } else {
                PortChoice::A
            }
        })
        .collect();
    let (sign, base) = ghz_branch_state(&choices)?;
    let mut state = match kind {
        BellKind::PhiPlus => base,
        BellKind::PhiMinus => base.phase_flip_photon(1),
        BellKind::PsiPlus => base.bit_flip_photon(1),
        BellKind::PsiMinus => base.phase_flip_photon(1).bit_flip_photon(1),
    };
    if cfg.theta_dist == PhaseDist::Uniform {
        let mut thetas = BTreeMap::new();
        for (i, c) in choices.iter().enumerate() {
            thetas.insert(c.mode(i), rng.gen::<f64>() * std::f64::consts::TAU);
        }
        state = collective_phase_channel(&state, &thetas);
    }
    if let Some(phi) = cfg.dephasing {
        state = timebin_dephasing_pure(&state, phi, 1);
    }
    let outcome = ghz_purify(&state, &choices)?;
    let corrected = correct_sign(&outcome, sign);
    let ports: Vec<&str> = outcome.pattern.iter().map(String::as_str).collect();
    let target = ghz_state(&ports, outcome.common_delay)?;
    let corrected_fidelity = corrected.fidelity(&target)?;
    Ok(TrialRecord {
        input_component: kind,
        branch_label: choices.iter().map(|c| c.label()).collect(),
        timebin_sign: sign,
        outcome,
        corrected_fidelity,
    })
}

fn pattern_is_accepting(pattern: &[String], parties: usize) -> bool {
    if pattern.len() != parties {
        return false;
    }
    (0..parties).all(|i| {
        let transmit = detector_port(i + 1);
        let reflect = detector_port(parties + i + 1);
        pattern.iter().filter(|p| **p == transmit || **p == reflect).count() == 1
    })
}

/// Run `cfg.trials` independent trials. Trial `i` owns the random stream
/// `(seed, i)`, so aggregation is deterministic regardless of scheduling.
pub fn run_experiment(cfg: &RunConfig) -> Result<RunStats> {
    cfg.validate()?;
    let records: Vec<TrialRecord> = (0..cfg.trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i);
            if cfg.parties == 2 {
                run_trial(cfg, &mut rng)
            } else {
                run_ghz_trial(cfg, &mut rng)
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let mut success_count = 0u64;
    let mut fidelity_sum = 0.0f64;
    let mut pattern_counts: BTreeMap<String, u64> = BTreeMap::new();
    let mut branch_counts: BTreeMap<String, u64> = BTreeMap::new();
    for r in &records {
        if pattern_is_accepting(&r.outcome.pattern, cfg.parties) {
            success_count += 1;
        }
        fidelity_sum += r.corrected_fidelity;
        *pattern_counts.entry(r.outcome.pattern_label()).or_insert(0) += 1;
        *branch_counts.entry(r.branch_label.clone()).or_insert(0) += 1;
    }
    Ok(RunStats {
        trials: cfg.trials,
        success_count,
        success_probability: success_count as f64 / cfg.trials as f64,
        mean_corrected_fidelity: fidelity_sum / cfg.trials as f64,
        pattern_counts,
        branch_counts,
    })
}

/// One row of the exhaustively generated pattern/correction table: a Bell
/// input on a given branch heralds each listed pattern with the listed
/// probability and pre-correction heralded state.
#[derive(Debug, Clone)]
pub struct TableEntry {
    pub bell: BellKind,
    pub branch: Branch,
    pub pattern: String,
    pub probability: f64,
    pub pre_correction: PureState,
}

/// Exhaustive evolution of all four Bell inputs through all four branch
/// purifiers.
pub fn pattern_correction_table() -> Result<Vec<TableEntry>> {
    let mut table = Vec::new();
    for bell in BellKind::ALL {
        for branch in Branch::ALL {
            let (ma, mb) = branch.modes();
            let sign = branch.timebin_sign();
            let input = bell_state(bell, (ma, mb), 0)?.attach_timebin(&[
                (vec![0, 0], INV_SQRT_2),
                (vec![1, 1], INV_SQRT_2 * sign),
            ])?;
            for (probability, outcome) in detect(&input, branch)? {
                table.push(TableEntry {
                    bell,
                    branch,
                    pattern: outcome.pattern_label(),
                    probability,
                    pre_correction: outcome.heralded,
                });
            }
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn item_state(
        branch: Branch,
        pols: (Polarization, Polarization),
        sign: f64,
    ) -> PureState {
        let (ma, mb) = branch.modes();
        let ket = |delay: u32| {
            BasisKet::new(vec![
                PhotonBasis::new(ma, pols.0, delay),
                PhotonBasis::new(mb, pols.1, delay),
            ])
        };
        PureState::from_terms(vec![
            (ket(0), INV_SQRT_2),
            (ket(1), INV_SQRT_2 * sign),
        ])
        .unwrap()
    }

    #[test]
    fn encode_source_pair_structure() {
        let s = encode_source_pair();
        assert_eq!(s.num_terms(), 2);
        for (ket, amp) in s.terms() {
            assert!((amp.re - std::f64::consts::FRAC_1_SQRT_2).abs() < TOL);
            assert!(ket.photons.iter().all(|p| p.pol == Polarization::H));
            assert_eq!(ket.photons[0].delay, ket.photons[1].delay);
        }
        // product of |H,H⟩ with the maximally entangled time-bin pair
        let pol = PureState::basis(BasisKet::new(vec![
            PhotonBasis::new("s1", Polarization::H, 0),
            PhotonBasis::new("s2", Polarization::H, 0),
        ]));
        let reference = pol
            .attach_timebin(&[(vec![0, 0], INV_SQRT_2), (vec![1, 1], INV_SQRT_2)])
            .unwrap();
        assert!((s.fidelity(&reference).unwrap() - 1.0).abs() < TOL);
    }

    #[test]
    fn encoder_distributes_with_quarter_probabilities() {
        let s = encoded_distribution_state();
        let branches = distribute(&s);
        let mut total = 0.0;
        for (branch, p, state) in &branches {
            assert!((p - 0.25).abs() < TOL, "{branch}: {p}");
            total += p;
            let expected = branch_state(*branch);
            assert!(state.as_ref().unwrap().approx_eq(&expected, TOL));
        }
        assert!((total - 1.0).abs() < TOL);
    }

    #[test]
    fn eight_amplitudes_of_the_distribution_state() {
        let s = encoded_distribution_state();
        assert_eq!(s.num_terms(), 8);
        let amp = 0.5 * std::f64::consts::FRAC_1_SQRT_2;
        for (ket, a) in s.terms() {
            let m0 = ket.photons[0].mode.as_str();
            let m1 = ket.photons[1].mode.as_str();
            let late = ket.photons[0].delay == 1;
            let cross = (m0, m1) == ("a1", "b2") || (m0, m1) == ("b1", "a2");
            let expected = if late && cross { -amp } else { amp };
            assert!((a.re - expected).abs() < TOL, "{m0}{m1} late={late}: {a}");
            assert!(a.im.abs() < TOL);
        }
    }

    #[test]
    fn purifier_golden_hh_item() {
        use Polarization::H;
        let input = item_state(Branch::A1A2, (H, H), 1.0);
        let outcome = purify_and_detect(&input, Branch::A1A2).unwrap();
        assert_eq!(outcome.pattern_label(), "D1D2");
        assert_eq!(outcome.common_delay, 1);
        let target = bell_state(BellKind::PhiPlus, ("D1", "D2"), 1).unwrap();
        assert!(outcome.heralded.approx_eq(&target, TOL));
    }

    #[test]
    fn purifier_golden_vv_item() {
        use Polarization::V;
        let input = item_state(Branch::A1A2, (V, V), 1.0);
        let outcome = purify_and_detect(&input, Branch::A1A2).unwrap();
        assert_eq!(outcome.pattern_label(), "D3D4");
        let target = bell_state(BellKind::PhiPlus, ("D3", "D4"), 1).unwrap();
        assert!(outcome.heralded.approx_eq(&target, TOL));
    }

    #[test]
    fn purifier_golden_hv_item() {
        use Polarization::{H, V};
        let input = item_state(Branch::A1A2, (H, V), 1.0);
        let outcome = purify_and_detect(&input, Branch::A1A2).unwrap();
        assert_eq!(outcome.pattern_label(), "D1D4");
        let target = bell_state(BellKind::PhiPlus, ("D1", "D4"), 1).unwrap();
        assert!(outcome.heralded.approx_eq(&target, TOL));
    }

    #[test]
    fn purifier_golden_vh_item() {
        use Polarization::{H, V};
        let input = item_state(Branch::A1A2, (V, H), 1.0);
        let outcome = purify_and_detect(&input, Branch::A1A2).unwrap();
        assert_eq!(outcome.pattern_label(), "D2D3");
        let target = bell_state(BellKind::PhiPlus, ("D2", "D3"), 1).unwrap();
        assert!(outcome.heralded.approx_eq(&target, TOL));
    }

    #[test]
    fn cross_branches_herald_phi_minus_until_corrected() {
        use Polarization::H;
        for branch in [Branch::A1B2, Branch::A2B1] {
            let input = item_state(branch, (H, H), branch.timebin_sign());
            let outcome = purify_and_detect(&input, branch).unwrap();
            let minus = bell_state(BellKind::PhiMinus, ("D1", "D2"), 1).unwrap();
            assert!(outcome.heralded.approx_eq(&minus, TOL));
            let corrected = correct(&outcome, branch);
            let plus = bell_state(BellKind::PhiPlus, ("D1", "D2"), 1).unwrap();
            assert!(corrected.approx_eq(&plus, TOL));
        }
    }

    #[test]
    fn correction_is_port_agnostic() {
        // flipping either port of |Φ−⟩ lands on |Φ+⟩
        let outcome = {
            use Polarization::H;
            let input = item_state(Branch::A1B2, (H, H), -1.0);
            purify_and_detect(&input, Branch::A1B2).unwrap()
        };
        let plus = bell_state(BellKind::PhiPlus, ("D1", "D2"), 1).unwrap();
        let via_first = outcome
            .heralded
            .phase_flip_mode("D1")
            .canonical_phase();
        let via_second = outcome
            .heralded
            .phase_flip_mode("D2")
            .canonical_phase();
        assert!(via_first.approx_eq(&plus, TOL));
        assert!(via_second.approx_eq(&plus, TOL));
    }

    #[test]
    fn bell_components_split_over_two_patterns() {
        let sign = Branch::A1A2.timebin_sign();
        let input = bell_state(BellKind::PhiPlus, ("a1", "a2"), 0)
            .unwrap()
            .attach_timebin(&[(vec![0, 0], INV_SQRT_2), (vec![1, 1], INV_SQRT_2 * sign)])
            .unwrap();
        let outcomes = detect(&input, Branch::A1A2).unwrap();
        assert_eq!(outcomes.len(), 2);
        let total: f64 = outcomes.iter().map(|(p, _)| p).sum();
        assert!((total - 1.0).abs() < TOL);
        for (p, o) in &outcomes {
            assert!((p - 0.5).abs() < TOL);
            let ports: Vec<&str> = o.pattern.iter().map(String::as_str).collect();
            let target = ghz_state(&ports, 1).unwrap();
            assert!((correct(o, Branch::A1A2).fidelity(&target).unwrap() - 1.0).abs() < TOL);
        }
    }

    #[test]
    fn pattern_table_covers_exactly_the_accepting_set() {
        let table = pattern_correction_table().unwrap();
        assert_eq!(table.len(), 32);
        let patterns: BTreeSet<String> = table.iter().map(|e| e.pattern.clone()).collect();
        let expected: BTreeSet<String> = ["D1D2", "D1D4", "D2D3", "D3D4"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(patterns, expected);
        for entry in &table {
            assert!((entry.probability - 0.5).abs() < TOL);
            // pre-correction heralded state is |Φ+⟩ on plus branches and
            // |Φ−⟩ on cross branches, on the fired ports.
            let ports: Vec<&str> = {
                let mut v: Vec<&str> = Vec::new();
                let label = &entry.pattern;
                // pattern label is two concatenated port names
                let split = label.rfind('D').unwrap();
                v.push(&label[..split]);
                v.push(&label[split..]);
                v
            };
            let kind = if entry.branch.timebin_sign() > 0.0 {
                BellKind::PhiPlus
            } else {
                BellKind::PhiMinus
            };
            let expected = bell_state(kind, (ports[0], ports[1]), 1).unwrap();
            assert!(entry.pre_correction.approx_eq(&expected, TOL));
        }
    }

    #[test]
    fn noiseless_trial_has_unit_fidelity() {
        use rand::SeedableRng;
        let cfg = RunConfig {
            noise: NoiseParams::noiseless(),
            theta_dist: PhaseDist::Zero,
            dephasing: None,
            trials: 1,
            seed: 7,
            parties: 2,
            branch: None,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let record = run_trial(&cfg, &mut rng).unwrap();
        assert!((record.corrected_fidelity - 1.0).abs() < TOL);
    }

    #[test]
    fn experiment_is_seed_deterministic() {
        let cfg = RunConfig {
            noise: NoiseParams::uniform(),
            theta_dist: PhaseDist::Uniform,
            dephasing: None,
            trials: 200,
            seed: 42,
            parties: 2,
            branch: None,
        };
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a, b);
        assert!((a.success_probability - 1.0).abs() < TOL);
        assert!((a.mean_corrected_fidelity - 1.0).abs() < TOL);
    }

    #[test]
    fn mixed_noise_covers_all_four_patterns() {
        let cfg = RunConfig {
            noise: NoiseParams::uniform(),
            theta_dist: PhaseDist::Zero,
            dephasing: None,
            trials: 2000,
            seed: 3,
            parties: 2,
            branch: None,
        };
        let stats = run_experiment(&cfg).unwrap();
        for pattern in ["D1D2", "D1D4", "D2D3", "D3D4"] {
            assert!(
                stats.pattern_counts.get(pattern).copied().unwrap_or(0) > 0,
                "pattern {pattern} never fired"
            );
        }
        for branch in Branch::ALL {
            assert!(stats.branch_counts.get(branch.label()).copied().unwrap_or(0) > 0);
        }
    }

    #[test]
    fn ghz_two_party_reduces_to_bipartite() {
        assert!(ghz_encode(2).unwrap().approx_eq(&encode_source_pair(), TOL));
        let (sign, state) = ghz_branch_state(&[PortChoice::A, PortChoice::A]).unwrap();
        assert_eq!(sign, 1.0);
        assert!(state.approx_eq(&branch_state(Branch::A1A2), TOL));
        let (sign, state) = ghz_branch_state(&[PortChoice::B, PortChoice::A]).unwrap();
        assert_eq!(sign, -1.0);
        assert!(state.approx_eq(&branch_state(Branch::A2B1), TOL));
    }

    #[test]
    fn ghz_three_party_noiseless() {
        let choices = [PortChoice::A, PortChoice::A, PortChoice::A];
        let (sign, state) = ghz_branch_state(&choices).unwrap();
        let outcome = ghz_purify(&state, &choices).unwrap();
        assert_eq!(outcome.pattern_label(), "D1D2D3");
        assert_eq!(outcome.common_delay, 1);
        let target = ghz_state(&["D1", "D2", "D3"], 1).unwrap();
        let corrected = correct_sign(&outcome, sign);
        assert!(corrected.approx_eq(&target, TOL));
    }

    #[test]
    fn ghz_rejects_out_of_range_party_counts() {
        assert!(matches!(ghz_encode(1), Err(Error::PartiesOutOfRange(1))));
        assert!(matches!(ghz_encode(9), Err(Error::PartiesOutOfRange(9))));
    }
}
