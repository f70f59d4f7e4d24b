//! Frozen Lake imitation task with a partially observed hazard.
//!
//! A 5x5 gridworld: start on the left edge, goal on the right, a 3x3
//! frozen lake in the middle. Crossing the lake beats walking around it
//! by one unit of reward, but one of the nine lake cells is unsafe in any
//! given episode. Experts know the unsafe cell and never step on it; a
//! model conditioned on the hidden view only sees that the patch is
//! somewhere in the lake. The exact pair model for the hidden view is the
//! uniform mixture of the nine expert trajectory distributions.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::CheatScore;
use crate::util::{logsumexp_scaled, substream_seed};

pub const GRID: usize = 5;
pub const START: Cell = Cell { row: 2, col: 0 };
pub const GOAL: Cell = Cell { row: 2, col: 4 };
pub const CENTER: Cell = Cell { row: 2, col: 2 };
pub const DISCOUNT: f64 = 0.9;
pub const TEMPERATURE: f64 = 2.5;
pub const HORIZON: usize = 16;

pub const REWARD_GOAL: f64 = 40.0;
pub const REWARD_BORDER: f64 = -3.0;
pub const REWARD_LAKE: f64 = -5.0;
pub const REWARD_CENTER: f64 = -10.0;

const SWEEP_CAP: usize = 10_000;
const CONVERGENCE_TOL: f64 = 1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum LakeError {
    #[error("soft-Q iteration did not converge within {SWEEP_CAP} sweeps (residual {residual})")]
    NonConvergence { residual: f64 },
    #[error("trajectory exceeds the {HORIZON}-step horizon")]
    TrajectoryTooLong,
    #[error("patch index {0} is out of range 0..9")]
    BadPatch(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub fn is_lake(self) -> bool {
        (1..=3).contains(&self.row) && (1..=3).contains(&self.col)
    }
}

/// The nine candidate locations of the unsafe patch, row-major.
pub fn lake_cells() -> [Cell; 9] {
    let mut cells = [Cell { row: 0, col: 0 }; 9];
    let mut i = 0;
    for row in 1..=3 {
        for col in 1..=3 {
            cells[i] = Cell { row, col };
            i += 1;
        }
    }
    cells
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
}

pub const ACTIONS: [Action; 4] = [Action::Up, Action::Down, Action::Left, Action::Right];

impl Action {
    pub fn apply(self, from: Cell) -> Option<Cell> {
        let (dr, dc): (isize, isize) = match self {
            Action::Up => (-1, 0),
            Action::Down => (1, 0),
            Action::Left => (0, -1),
            Action::Right => (0, 1),
        };
        let row = from.row as isize + dr;
        let col = from.col as isize + dc;
        if (0..GRID as isize).contains(&row) && (0..GRID as isize).contains(&col) {
            Some(Cell { row: row as usize, col: col as usize })
        } else {
            None
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            Action::Up => "up",
            Action::Down => "down",
            Action::Left => "left",
            Action::Right => "right",
        }
    }
}

/// Reward for moving onto `cell`.
pub fn reward(cell: Cell) -> f64 {
    if cell == GOAL {
        REWARD_GOAL
    } else if cell == CENTER {
        REWARD_CENTER
    } else if cell.is_lake() {
        REWARD_LAKE
    } else {
        REWARD_BORDER
    }
}

/// A tabular stochastic policy; probabilities are zero for actions that
/// leave the grid or step on the policy's unsafe patch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    /// `probs[row * GRID + col][action]`.
    probs: Vec<[f64; 4]>,
    pub patch: Cell,
}

impl Policy {
    pub fn action_probs(&self, state: Cell) -> &[f64; 4] {
        &self.probs[state.row * GRID + state.col]
    }

    /// Probability of the exact trajectory (product of per-step action
    /// probabilities). Zero for trajectories this expert could not emit.
    pub fn trajectory_prob(&self, traj: &Trajectory) -> f64 {
        let mut state = START;
        let mut p = 1.0;
        for &a in &traj.actions {
            if state == GOAL {
                return 0.0; // actions after termination
            }
            p *= self.action_probs(state)[a as usize];
            if p == 0.0 {
                return 0.0;
            }
            match a.apply(state) {
                Some(next) => state = next,
                None => return 0.0,
            }
        }
        let reached = state == GOAL;
        if reached != traj.reached_goal {
            return 0.0;
        }
        if !reached && traj.actions.len() != HORIZON {
            return 0.0; // episodes only stop at the goal or the horizon
        }
        p
    }

    /// Samples one episode: actions until the goal or the horizon.
    pub fn sample_trajectory(&self, rng: &mut impl Rng) -> Trajectory {
        let mut state = START;
        let mut actions = Vec::new();
        for _ in 0..HORIZON {
            let probs = self.action_probs(state);
            let mut u: f64 = rng.gen();
            let mut chosen = None;
            for (ai, &p) in probs.iter().enumerate() {
                u -= p;
                if u < 0.0 && p > 0.0 {
                    chosen = Some(ACTIONS[ai]);
                    break;
                }
            }
            let a = chosen.unwrap_or_else(|| {
                // Rounding left a sliver of mass; take the last legal action.
                ACTIONS[probs.iter().rposition(|&p| p > 0.0).expect("legal action exists")]
            });
            actions.push(a);
            state = a.apply(state).expect("sampled actions stay on the grid");
            if state == GOAL {
                return Trajectory { actions, reached_goal: true };
            }
        }
        Trajectory { actions, reached_goal: false }
    }
}

/// An episode from the start state: the action sequence, plus whether it
/// terminated at the goal (otherwise it was cut at the horizon).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Trajectory {
    pub actions: Vec<Action>,
    pub reached_goal: bool,
}

impl Trajectory {
    /// Cells visited after leaving the start state.
    pub fn visited(&self) -> Vec<Cell> {
        let mut state = START;
        let mut cells = Vec::with_capacity(self.actions.len());
        for &a in &self.actions {
            if let Some(next) = a.apply(state) {
                state = next;
                cells.push(state);
            }
        }
        cells
    }

    pub fn crosses_lake(&self) -> bool {
        self.visited().iter().any(|c| c.is_lake())
    }

    /// Token form used in datasets and decode output:
    /// `c0 r2 right c1 r2 ... FINISH` (column before row, as printed in
    /// the environment transcripts).
    pub fn tokens(&self) -> String {
        let mut state = START;
        let mut parts = Vec::new();
        for &a in &self.actions {
            parts.push(format!("c{} r{} {}", state.col, state.row, a.token()));
            if let Some(next) = a.apply(state) {
                state = next;
            }
        }
        if self.reached_goal {
            parts.push("FINISH".to_string());
        }
        parts.join(" ")
    }
}

/// Solves the soft-Q fixed point for one patch location:
/// `Q(s, a) = r(s') + gamma * tau * logsumexp(Q(s', .) / tau)` over legal
/// actions, with the goal terminal. The expert policy is the temperature-
/// `tau` softmax of `Q`.
pub fn solve_expert(patch: Cell) -> Result<Policy, LakeError> {
    let legal = |state: Cell, a: Action| -> Option<Cell> {
        let next = a.apply(state)?;
        (next != patch).then_some(next)
    };
    let idx = |c: Cell| c.row * GRID + c.col;
    let mut q = vec![[f64::NEG_INFINITY; 4]; GRID * GRID];
    for row in 0..GRID {
        for col in 0..GRID {
            let s = Cell { row, col };
            if s == GOAL {
                continue;
            }
            for (ai, &a) in ACTIONS.iter().enumerate() {
                if legal(s, a).is_some() {
                    q[idx(s)][ai] = 0.0;
                }
            }
        }
    }

    let mut residual = f64::INFINITY;
    for _ in 0..SWEEP_CAP {
        residual = 0.0;
        let mut next_q = q.clone();
        for row in 0..GRID {
            for col in 0..GRID {
                let s = Cell { row, col };
                if s == GOAL {
                    continue;
                }
                for (ai, &a) in ACTIONS.iter().enumerate() {
                    let Some(target) = legal(s, a) else { continue };
                    let value = if target == GOAL {
                        0.0
                    } else {
                        let finite: Vec<f64> = q[idx(target)]
                            .iter()
                            .copied()
                            .filter(|v| v.is_finite())
                            .collect();
                        logsumexp_scaled(&finite, TEMPERATURE)
                    };
                    let new = reward(target) + DISCOUNT * value;
                    residual = residual.max((new - q[idx(s)][ai]).abs());
                    next_q[idx(s)][ai] = new;
                }
            }
        }
        q = next_q;
        if residual < CONVERGENCE_TOL {
            let mut probs = vec![[0.0; 4]; GRID * GRID];
            for (si, qs) in q.iter().enumerate() {
                let finite: Vec<f64> = qs.iter().copied().filter(|v| v.is_finite()).collect();
                if finite.is_empty() {
                    continue;
                }
                let lse = logsumexp_scaled(&finite, TEMPERATURE);
                for (ai, &qa) in qs.iter().enumerate() {
                    if qa.is_finite() {
                        probs[si][ai] = ((qa - lse) / TEMPERATURE).exp();
                    }
                }
            }
            return Ok(Policy { probs, patch });
        }
    }
    Err(LakeError::NonConvergence { residual })
}

/// What the model sees: either the true patch location or only that the
/// patch is somewhere in the lake.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum View {
    Full { patch_index: usize },
    Hidden,
}

/// The exact pair model over expert trajectories: a singleton for the
/// full view and the uniform nine-way mixture for the hidden view. Scores
/// are computed per trajectory from the component probabilities, so the
/// (enormous) joint over trajectory pairs is never materialized.
#[derive(Debug, Clone)]
pub struct LakePairOracle {
    experts: Vec<Policy>,
}

impl LakePairOracle {
    pub fn new() -> Result<Self, LakeError> {
        let experts = lake_cells()
            .iter()
            .map(|&patch| solve_expert(patch))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { experts })
    }

    pub fn experts(&self) -> &[Policy] {
        &self.experts
    }

    /// Mixture weights and per-component probabilities of `traj` for a view.
    fn components(&self, view: View, traj: &Trajectory) -> (Vec<f64>, Vec<f64>) {
        match view {
            View::Full { patch_index } => (
                vec![1.0],
                vec![self.experts[patch_index].trajectory_prob(traj)],
            ),
            View::Hidden => (
                vec![1.0 / 9.0; 9],
                self.experts.iter().map(|e| e.trajectory_prob(traj)).collect(),
            ),
        }
    }

    /// `p(y | view)` under the mixture.
    pub fn marginal(&self, view: View, traj: &Trajectory) -> Result<f64, LakeError> {
        if traj.actions.len() > HORIZON {
            return Err(LakeError::TrajectoryTooLong);
        }
        let (w, p) = self.components(view, traj);
        Ok(w.iter().zip(&p).map(|(w, p)| w * p).sum())
    }

    /// Cheat score of a trajectory for a view.
    pub fn score(&self, view: View, traj: &Trajectory) -> Result<CheatScore, LakeError> {
        if traj.actions.len() > HORIZON {
            return Err(LakeError::TrajectoryTooLong);
        }
        let (w, p) = self.components(view, traj);
        Ok(CheatScore::from_mixture(traj.tokens(), &w, &p))
    }

    /// Brute-force mixture variance `E[(p_marginal - q_i)^2]` over the
    /// components, for checking the cheat variance against ground truth.
    pub fn brute_force_sq_err(&self, view: View, traj: &Trajectory) -> f64 {
        let (w, p) = self.components(view, traj);
        let mean: f64 = w.iter().zip(&p).map(|(w, p)| w * p).sum();
        w.iter().zip(&p).map(|(w, p)| w * (p - mean) * (p - mean)).sum()
    }

    /// Samples from the model's `Y1` marginal for a view (for the hidden
    /// view: first a patch, then an episode from that expert).
    pub fn sample_marginal(&self, view: View, rng: &mut impl Rng) -> Trajectory {
        match view {
            View::Full { patch_index } => self.experts[patch_index].sample_trajectory(rng),
            View::Hidden => {
                let patch_index = rng.gen_range(0..9);
                self.experts[patch_index].sample_trajectory(rng)
            }
        }
    }
}

/// The oracle fixed to one view, as decoders see it.
#[derive(Debug, Clone, Copy)]
pub struct LakeQueryModel<'a> {
    oracle: &'a LakePairOracle,
    pub view: View,
}

impl LakePairOracle {
    pub fn at_view(&self, view: View) -> LakeQueryModel<'_> {
        LakeQueryModel { oracle: self, view }
    }
}

impl crate::decode::CheatScoredModel for LakeQueryModel<'_> {
    type Resp = Trajectory;

    fn sample_response<R: rand::Rng>(&self, rng: &mut R) -> Trajectory {
        self.oracle.sample_marginal(self.view, rng)
    }

    fn score(&self, y: &Trajectory) -> CheatScore {
        self.oracle.score(self.view, y).expect("sampled trajectories fit the horizon")
    }

    fn marginal_prob(&self, y: &Trajectory) -> f64 {
        self.oracle.marginal(self.view, y).expect("sampled trajectories fit the horizon")
    }

    fn label(&self, y: &Trajectory) -> String {
        y.tokens()
    }
}

/// One dataset record: both demonstrations share the same patch; the view
/// is the model's input and the patch is kept as an audit latent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LakeExample {
    pub patch_index: usize,
    pub hidden: bool,
    pub y1: Trajectory,
    pub y2: Trajectory,
}

/// Draws `n` examples: patch uniform over the nine lake cells, hidden view
/// with probability `hidden_fraction`, and two i.i.d. expert episodes.
pub fn dataset(
    oracle: &LakePairOracle,
    n: usize,
    hidden_fraction: f64,
    seed: u64,
) -> Vec<LakeExample> {
    crate::util::parallel_map_indexed(n, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(substream_seed(seed, i as u64));
        let patch_index = rng.gen_range(0..9);
        let hidden = rng.gen::<f64>() < hidden_fraction;
        let expert = &oracle.experts()[patch_index];
        let y1 = expert.sample_trajectory(&mut rng);
        let y2 = expert.sample_trajectory(&mut rng);
        LakeExample { patch_index, hidden, y1, y2 }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn oracle() -> LakePairOracle {
        LakePairOracle::new().unwrap()
    }

    #[test]
    fn policies_are_normalized_and_avoid_the_patch() {
        for (pi, &patch) in lake_cells().iter().enumerate() {
            let policy = solve_expert(patch).unwrap();
            for row in 0..GRID {
                for col in 0..GRID {
                    let s = Cell { row, col };
                    if s == GOAL {
                        continue;
                    }
                    let probs = policy.action_probs(s);
                    let total: f64 = probs.iter().sum();
                    assert!((total - 1.0).abs() < 1e-12, "patch {pi} state {s:?}");
                    for (ai, &p) in probs.iter().enumerate() {
                        match ACTIONS[ai].apply(s) {
                            None => assert_eq!(p, 0.0, "off-grid action has mass"),
                            Some(next) if next == patch => {
                                assert_eq!(p, 0.0, "patch action has mass")
                            }
                            _ => {}
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn crossing_beats_going_around_by_one() {
        // Crossing pays 20, going around pays 19.
        let crossing = REWARD_LAKE + REWARD_CENTER + REWARD_LAKE + REWARD_GOAL;
        let around = 7.0 * REWARD_BORDER + REWARD_GOAL;
        assert_eq!(crossing, 20.0);
        assert_eq!(around, 19.0);
    }

    #[test]
    fn sampled_trajectories_have_positive_probability() {
        let oracle = oracle();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let patch_index = rng.gen_range(0..9);
            let traj = oracle.experts()[patch_index].sample_trajectory(&mut rng);
            assert!(traj.actions.len() <= HORIZON);
            let q = oracle.experts()[patch_index].trajectory_prob(&traj);
            assert!(q > 0.0);
            // Hidden-view marginal mixes in the generating expert, so it
            // is positive too: samplers never emit their own hallucination.
            assert!(oracle.marginal(View::Hidden, &traj).unwrap() > 0.0);
        }
    }

    #[test]
    fn full_view_confidence_is_one() {
        let oracle = oracle();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for patch_index in 0..9 {
            let traj = oracle.experts()[patch_index].sample_trajectory(&mut rng);
            let s = oracle.score(View::Full { patch_index }, &traj).unwrap();
            assert!((s.confidence - 1.0).abs() < 1e-12);
            assert!(s.v_cheat.abs() < 1e-15);
        }
    }

    #[test]
    fn hidden_view_scores_are_calibrated_mixture_scores() {
        let oracle = oracle();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let patch_index = rng.gen_range(0..9);
            let traj = oracle.experts()[patch_index].sample_trajectory(&mut rng);
            let s = oracle.score(View::Hidden, &traj).unwrap();
            assert!(s.confidence >= 0.0 && s.confidence <= 1.0 + 1e-12);
            // v_cheat equals the brute-force mixture variance exactly.
            let brute = oracle.brute_force_sq_err(View::Hidden, &traj);
            assert!((s.v_cheat - brute).abs() < 1e-15);
        }
    }

    #[test]
    fn five_of_nine_equal_components_give_confidence_five_ninths() {
        // Mixture arithmetic: a trajectory legal under exactly 5 patches
        // with the same probability q under each.
        let q = 0.0123;
        let probs = [q, q, q, q, q, 0.0, 0.0, 0.0, 0.0];
        let s = CheatScore::from_mixture("t", &[1.0 / 9.0; 9], &probs);
        assert!((s.confidence - 5.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn crossing_trajectories_lose_at_least_one_component() {
        let oracle = oracle();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut seen_crossing = 0;
        for _ in 0..500 {
            let patch_index = rng.gen_range(0..9);
            let traj = oracle.experts()[patch_index].sample_trajectory(&mut rng);
            if !traj.crosses_lake() {
                continue;
            }
            seen_crossing += 1;
            let s = oracle.score(View::Hidden, &traj).unwrap();
            // At least one expert assigns probability zero, so the
            // Cauchy-Schwarz bound caps the confidence at 8/9.
            assert!(s.confidence <= 8.0 / 9.0 + 1e-12);
        }
        assert!(seen_crossing > 100, "experts should cross the lake often");
    }

    #[test]
    fn trajectory_tokens_round_out_the_interface() {
        let traj = Trajectory {
            actions: vec![Action::Right, Action::Right, Action::Right, Action::Right],
            reached_goal: true,
        };
        assert_eq!(
            traj.tokens(),
            "c0 r2 right c1 r2 right c2 r2 right c3 r2 right FINISH"
        );
        assert!(traj.crosses_lake());
    }

    #[test]
    fn dataset_shares_the_patch_between_demonstrations() {
        let oracle = oracle();
        let data = dataset(&oracle, 300, 0.5, 99);
        assert_eq!(data, dataset(&oracle, 300, 0.5, 99));
        let hidden = data.iter().filter(|e| e.hidden).count();
        assert!(hidden > 100 && hidden < 200);
        let mean_len: f64 =
            data.iter().map(|e| e.y1.actions.len() as f64).sum::<f64>() / data.len() as f64;
        assert!(mean_len < HORIZON as f64);
        for e in &data {
            assert!(oracle.experts()[e.patch_index].trajectory_prob(&e.y1) > 0.0);
            assert!(oracle.experts()[e.patch_index].trajectory_prob(&e.y2) > 0.0);
        }
    }

    #[test]
    fn too_long_trajectories_are_rejected() {
        let oracle = oracle();
        let traj = Trajectory {
            actions: vec![Action::Up; HORIZON + 1],
            reached_goal: false,
        };
        assert_eq!(
            oracle.score(View::Hidden, &traj),
            Err(LakeError::TrajectoryTooLong)
        );
    }
}
