//! Linear policy: observation assembly, `a = M s`, action scaling, and the
//! plain-text policy file format.

use std::collections::VecDeque;
use std::fs;
use std::io;
use std::path::Path;

use nalgebra::{SMatrix, SVector};
use thiserror::Error;

use crate::gaitgen::{LegAction, LegId};
use crate::slopeest::PlaneEstimate;

pub const OBS_DIM: usize = 11;
pub const ACTION_DIM: usize = 20;
pub const PARAM_COUNT: usize = OBS_DIM * ACTION_DIM;

/// Channels per leg, in action-vector order.
pub const CHANNELS: [&str; 5] = ["SL", "SA", "Xs", "Ys", "Zs"];

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("failed to access policy file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("malformed policy file: {0}")]
    Format(String),
}

/// `[Θ(t-2), Θ(t-1), Θ(t), λ(t), γ(t)]`, each Θ being (roll, pitch, yaw).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation(pub SVector<f64, OBS_DIM>);

impl Observation {
    pub fn zeros() -> Self {
        Self(SVector::zeros())
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }
}

/// The last three torso orientations sampled at policy steps.
#[derive(Debug, Clone, Default)]
pub struct OrientationHistory {
    samples: VecDeque<[f64; 3]>,
}

impl OrientationHistory {
    pub fn new() -> Self {
        Self::default()
    }

    /// A history holding `theta` three times.
    pub fn filled(theta: [f64; 3]) -> Self {
        let mut h = Self::new();
        for _ in 0..3 {
            h.push(theta);
        }
        h
    }

    pub fn push(&mut self, theta: [f64; 3]) {
        if self.samples.len() == 3 {
            self.samples.pop_front();
        }
        self.samples.push_back(theta);
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Oldest to newest, missing older entries padded with the oldest sample.
    fn padded(&self) -> Option<[[f64; 3]; 3]> {
        let oldest = *self.samples.front()?;
        let mut out = [oldest; 3];
        let skip = 3 - self.samples.len();
        for (slot, s) in out.iter_mut().skip(skip).zip(self.samples.iter()) {
            *slot = *s;
        }
        Some(out)
    }
}

/// Assembles the observation vector. An empty history is treated as a
/// level, zero-heading torso.
pub fn build_observation(history: &OrientationHistory, plane: &PlaneEstimate) -> Observation {
    let hist = history.padded().unwrap_or([[0.0; 3]; 3]);
    let mut v = SVector::<f64, OBS_DIM>::zeros();
    for (i, theta) in hist.iter().enumerate() {
        for (j, a) in theta.iter().enumerate() {
            v[3 * i + j] = *a;
        }
    }
    v[9] = plane.roll;
    v[10] = plane.pitch;
    Observation(v)
}

pub type RawAction = SVector<f64, ACTION_DIM>;

/// The 20x11 policy matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyMatrix(pub SMatrix<f64, ACTION_DIM, OBS_DIM>);

impl PolicyMatrix {
    pub fn zeros() -> Self {
        Self(SMatrix::zeros())
    }

    /// Row-major parameter vector θ.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(PARAM_COUNT);
        for r in 0..ACTION_DIM {
            for c in 0..OBS_DIM {
                out.push(self.0[(r, c)]);
            }
        }
        out
    }

    pub fn from_params(params: &[f64]) -> Self {
        assert_eq!(params.len(), PARAM_COUNT, "policy parameter vector must have {PARAM_COUNT} entries");
        Self(SMatrix::from_row_slice(params))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl Default for PolicyMatrix {
    fn default() -> Self {
        Self::zeros()
    }
}

/// `M s`, summed left to right within each row.
pub fn act(m: &PolicyMatrix, s: &Observation) -> RawAction {
    let mut out = RawAction::zeros();
    for r in 0..ACTION_DIM {
        let mut acc = 0.0;
        for c in 0..OBS_DIM {
            acc += m.0[(r, c)] * s.0[c];
        }
        out[r] = acc;
    }
    out
}

/// Physical interval a raw channel in `[-1, 1]` maps onto.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelRange {
    pub min: f64,
    pub max: f64,
}

impl ChannelRange {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn to_physical(&self, raw: f64) -> f64 {
        let r = raw.clamp(-1.0, 1.0);
        let mid = 0.5 * (self.min + self.max);
        let half = 0.5 * (self.max - self.min);
        mid + half * r
    }

    pub fn to_raw(&self, phys: f64) -> f64 {
        let mid = 0.5 * (self.min + self.max);
        let half = 0.5 * (self.max - self.min);
        if half == 0.0 {
            0.0
        } else {
            ((phys - mid) / half).clamp(-1.0, 1.0)
        }
    }

    pub fn span(&self) -> f64 {
        self.max - self.min
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.min + self.max)
    }

    pub fn clamp(&self, phys: f64) -> f64 {
        phys.clamp(self.min, self.max)
    }
}

/// Raw-to-physical ranges for the five per-leg channels. Only the step
/// length and lateral shift bounds come from the robot; the others are
/// chosen to keep the nominal trajectory inside the leg workspace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionScaling {
    pub step_len: ChannelRange,
    pub steer: ChannelRange,
    pub shift_x: ChannelRange,
    pub shift_y: ChannelRange,
    pub shift_z: ChannelRange,
}

impl Default for ActionScaling {
    fn default() -> Self {
        Self {
            step_len: ChannelRange::new(0.0, 0.136),
            steer: ChannelRange::new(-0.35, 0.35),
            shift_x: ChannelRange::new(-0.06, 0.06),
            shift_y: ChannelRange::new(-0.035, 0.035),
            shift_z: ChannelRange::new(-0.06, 0.06),
        }
    }
}

impl ActionScaling {
    pub fn channels(&self) -> [ChannelRange; 5] {
        [self.step_len, self.steer, self.shift_x, self.shift_y, self.shift_z]
    }
}

/// Four leg actions in [`LegId::ALL`] order.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ActionVector(pub [LegAction; 4]);

impl ActionVector {
    pub fn leg(&self, leg: LegId) -> &LegAction {
        &self.0[leg.index()]
    }

    /// The same action on every leg.
    pub fn uniform(a: LegAction) -> Self {
        Self([a; 4])
    }

    /// Flattened physical values, per leg `[SL, SA, Xs, Ys, Zs]`.
    pub fn to_array(&self) -> [f64; ACTION_DIM] {
        let mut out = [0.0; ACTION_DIM];
        for (i, a) in self.0.iter().enumerate() {
            out[5 * i..5 * i + 5].copy_from_slice(&[a.step_len, a.steer, a.shift_x, a.shift_y, a.shift_z]);
        }
        out
    }
}

/// Clamps each raw entry to `[-1, 1]` and maps it to its physical range.
pub fn scale_clip_action(raw: &RawAction, scaling: &ActionScaling) -> ActionVector {
    let ch = scaling.channels();
    let mut legs = [LegAction::default(); 4];
    for (i, leg) in legs.iter_mut().enumerate() {
        let v = |k: usize| ch[k].to_physical(raw[5 * i + k]);
        *leg = LegAction { step_len: v(0), steer: v(1), shift_x: v(2), shift_y: v(3), shift_z: v(4) };
    }
    ActionVector(legs)
}

/// Inverse of [`scale_clip_action`] for in-range physical actions.
pub fn unscale_action(action: &ActionVector, scaling: &ActionScaling) -> RawAction {
    let ch = scaling.channels();
    let phys = action.to_array();
    RawAction::from_fn(|r, _| ch[r % 5].to_raw(phys[r]))
}

/// Writes the policy file: a `20 11` header, twenty rows of eleven values
/// with 17 significant digits, then `# key=value` metadata lines.
pub fn save_policy(m: &PolicyMatrix, path: &Path, metadata: &[(&str, String)]) -> Result<(), PolicyError> {
    fs::write(path, policy_to_string(m, metadata))
        .map_err(|source| PolicyError::Io { path: path.display().to_string(), source })
}

pub fn policy_to_string(m: &PolicyMatrix, metadata: &[(&str, String)]) -> String {
    let mut s = format!("{ACTION_DIM} {OBS_DIM}\n");
    for r in 0..ACTION_DIM {
        let row: Vec<String> = (0..OBS_DIM).map(|c| format!("{:.16e}", m.0[(r, c)])).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    for (k, v) in metadata {
        s.push_str(&format!("# {k}={v}\n"));
    }
    s
}

pub fn load_policy(path: &Path) -> Result<PolicyMatrix, PolicyError> {
    let text =
        fs::read_to_string(path).map_err(|source| PolicyError::Io { path: path.display().to_string(), source })?;
    parse_policy(&text)
}

pub fn parse_policy(text: &str) -> Result<PolicyMatrix, PolicyError> {
    let fmt = |m: String| PolicyError::Format(m);
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| fmt("empty file".into()))?;
    let dims: Vec<&str> = header.split_whitespace().collect();
    if dims != [ACTION_DIM.to_string(), OBS_DIM.to_string()] {
        return Err(fmt(format!("expected header \"{ACTION_DIM} {OBS_DIM}\", found \"{}\"", header.trim())));
    }
    let mut m = SMatrix::<f64, ACTION_DIM, OBS_DIM>::zeros();
    for r in 0..ACTION_DIM {
        let line = lines.next().ok_or_else(|| fmt(format!("missing row {}", r + 1)))?;
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|e| fmt(format!("row {}: {e}", r + 1))))
            .collect::<Result<_, _>>()?;
        if vals.len() != OBS_DIM {
            return Err(fmt(format!("row {} has {} values, expected {OBS_DIM}", r + 1, vals.len())));
        }
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(fmt(format!("row {} has non-finite values", r + 1)));
        }
        for (c, v) in vals.into_iter().enumerate() {
            m[(r, c)] = v;
        }
    }
    if let Some(extra) = lines.find(|l| !l.trim_start().starts_with('#')) {
        return Err(fmt(format!("unexpected trailing content: \"{}\"", extra.trim())));
    }
    Ok(PolicyMatrix(m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(seed: u64) -> PolicyMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PolicyMatrix(SMatrix::from_fn(|_, _| rng.gen_range(-3.0..3.0)))
    }

    #[test]
    fn observation_from_zero_history() {
        let h = OrientationHistory::filled([0.0; 3]);
        assert_eq!(build_observation(&h, &PlaneEstimate::flat()), Observation::zeros());
    }

    #[test]
    fn observation_duplicates_single_sample() {
        let mut h = OrientationHistory::new();
        h.push([0.1, 0.2, 0.3]);
        let plane = PlaneEstimate { roll: -0.05, pitch: 0.07, ..PlaneEstimate::flat() };
        let obs = build_observation(&h, &plane);
        assert_eq!(obs.as_slice(), &[0.1, 0.2, 0.3, 0.1, 0.2, 0.3, 0.1, 0.2, 0.3, -0.05, 0.07]);
    }

    #[test]
    fn observation_is_ordered_oldest_first() {
        let mut h = OrientationHistory::new();
        for theta in [[1.0, 2.0, 3.0], [4.0, 5.0, 6.0], [7.0, 8.0, 9.0], [10.0, 11.0, 12.0]] {
            h.push(theta);
        }
        let plane = PlaneEstimate { roll: 13.0, pitch: 14.0, ..PlaneEstimate::flat() };
        let obs = build_observation(&h, &plane);
        let expect: Vec<f64> = (4..=14).map(f64::from).collect();
        assert_eq!(obs.as_slice(), expect.as_slice());
    }

    #[test]
    fn act_examples() {
        let s = Observation(SVector::from_fn(|i, _| i as f64 + 1.0));
        assert_eq!(act(&PolicyMatrix::zeros(), &s), RawAction::zeros());

        let mut ident = PolicyMatrix::zeros();
        for i in 0..OBS_DIM {
            ident.0[(i, i)] = 1.0;
        }
        let mut e3 = Observation::zeros();
        e3.0[2] = 1.0;
        let out = act(&ident, &e3);
        assert_eq!(out[2], 1.0);
        assert_eq!(out.iter().filter(|v| **v != 0.0).count(), 1);
    }

    #[test]
    fn act_matches_row_dot_products() {
        let m = random_matrix(3);
        let s = Observation(SVector::from_fn(|i, _| (i as f64 * 0.37).sin()));
        let out = act(&m, &s);
        for r in 0..ACTION_DIM {
            let row: Vec<f64> = (0..OBS_DIM).map(|c| m.0[(r, c)]).collect();
            let dot: f64 = row.iter().zip(s.as_slice()).map(|(a, b)| a * b).sum();
            assert!((out[r] - dot).abs() < 1e-13);
        }
    }

    #[test]
    fn scaling_midpoints_and_bounds() {
        let sc = ActionScaling::default();
        let mid = scale_clip_action(&RawAction::zeros(), &sc);
        for a in mid.0 {
            assert!((a.step_len - 0.068).abs() < 1e-15);
            assert_eq!((a.steer, a.shift_x, a.shift_y, a.shift_z), (0.0, 0.0, 0.0, 0.0));
        }
        let hi = scale_clip_action(&RawAction::repeat(5.0), &sc);
        assert_eq!(hi.0[0].step_len, 0.136);
        assert_eq!(hi.0[0].shift_y, 0.035);
        let lo = scale_clip_action(&RawAction::repeat(-1.0), &sc);
        assert_eq!(lo.0[3].step_len, 0.0);
        assert_eq!(lo.0[3].shift_y, -0.035);
    }

    #[test]
    fn unscale_inverts_scale_in_range() {
        let sc = ActionScaling::default();
        let raw = RawAction::from_fn(|r, _| ((r as f64) * 0.77).sin() * 0.9);
        let back = unscale_action(&scale_clip_action(&raw, &sc), &sc);
        assert!((back - raw).amax() < 1e-12);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.txt");
        let m = random_matrix(11);
        save_policy(&m, &path, &[("iteration", "7".into()), ("seed", "42".into())]).unwrap();
        let back = load_policy(&path).unwrap();
        assert!(m.0.iter().zip(back.0.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn bad_files_rejected() {
        assert!(matches!(parse_policy(""), Err(PolicyError::Format(_))));
        let m = policy_to_string(&PolicyMatrix::zeros(), &[]);
        let wrong = m.replacen("20 11", "19 11", 1);
        assert!(matches!(parse_policy(&wrong), Err(PolicyError::Format(_))));
        let short: String = m.lines().take(10).map(|l| format!("{l}\n")).collect();
        assert!(matches!(parse_policy(&short), Err(PolicyError::Format(_))));
        let garbage = m.replacen("0.0000000000000000e0", "abc", 1);
        assert!(matches!(parse_policy(&garbage), Err(PolicyError::Format(_))));
        assert!(matches!(load_policy(Path::new("/nonexistent/p.txt")), Err(PolicyError::Io { .. })));
    }

    proptest! {
        #[test]
        fn act_is_linear(seed in 0u64..1000, a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let m = random_matrix(seed);
            let s1 = Observation(SVector::from_fn(|i, _| ((i as f64) + seed as f64).sin()));
            let s2 = Observation(SVector::from_fn(|i, _| ((i as f64) * 1.3 - seed as f64).cos()));
            let lhs = act(&m, &Observation(s1.0 * a + s2.0 * b));
            let rhs = act(&m, &s1) * a + act(&m, &s2) * b;
            prop_assert!((lhs - rhs).amax() < 1e-12);
        }

        #[test]
        fn scaling_is_monotone_and_saturates(x in -3.0f64..3.0, dx in 0.0f64..2.0) {
            let sc = ActionScaling::default();
            for ch in sc.channels() {
                prop_assert!(ch.to_physical(x) <= ch.to_physical(x + dx));
                let sat = ch.to_physical(x.abs() + 1.0);
                prop_assert_eq!(ch.to_physical(ch.to_raw(sat)), sat);
            }
        }
    }
}
