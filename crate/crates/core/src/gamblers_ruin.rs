//! Gambler's ruin: the classical coin game and its amplitude analogue, where
//! the squared amplitudes of a two-state superposition play the two stakes.

use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{run_ensemble, CslModel, EnsembleSummary};
use crate::error::{CslError, Result};
use crate::hilbert::{HermitianOperator, QuantumState};
use crate::noise::SeededRng;
use crate::table::{fmt_num, Table};

const GAMES_PER_CHUNK: usize = 256;

/// Plays one fair-coin game, a dollar per toss, until one side is broke.
/// Returns whether the first gambler won and the number of tosses.
pub fn play_coin_game(stake_a: u64, stake_b: u64, rng: &mut SeededRng) -> (bool, u64) {
    let total = stake_a + stake_b;
    let (mut a, mut tosses) = (stake_a, 0);
    while a != 0 && a != total {
        if rng.coin() {
            a += 1;
        } else {
            a -= 1;
        }
        tosses += 1;
    }
    (a == total, tosses)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoinGameSummary {
    pub stake_a: u64,
    pub stake_b: u64,
    pub n_games: usize,
    pub wins_a: usize,
    pub win_frequency_a: f64,
    pub std_error: f64,
    pub mean_tosses: f64,
}

impl CoinGameSummary {
    /// Win probability of the first gambler, `stake_a / (stake_a + stake_b)`.
    pub fn expected_frequency_a(&self) -> f64 {
        self.stake_a as f64 / (self.stake_a + self.stake_b) as f64
    }

    pub fn to_table(&self) -> Table {
        let mut t = Table::new(&["gambler", "stake", "wins", "frequency", "expected"]);
        let p = self.expected_frequency_a();
        let f = self.win_frequency_a;
        t.push(vec!["a".into(), self.stake_a.to_string(), self.wins_a.to_string(), fmt_num(f), fmt_num(p)]);
        let wins_b = self.n_games - self.wins_a;
        t.push(vec!["b".into(), self.stake_b.to_string(), wins_b.to_string(), fmt_num(1.0 - f), fmt_num(1.0 - p)]);
        t
    }
}

/// Plays `n_games` games, game `i` on stream `i` of `seed`.
pub fn coin_game_frequencies(stake_a: u64, stake_b: u64, n_games: usize, seed: u64) -> Result<CoinGameSummary> {
    if stake_a == 0 || stake_b == 0 {
        return Err(CslError::InvalidParameter("stakes must be positive".into()));
    }
    if n_games == 0 {
        return Err(CslError::InvalidParameter("n_games must be >= 1".into()));
    }
    let (wins_a, tosses) = (0..n_games)
        .step_by(GAMES_PER_CHUNK)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|start| {
            (start..(start + GAMES_PER_CHUNK).min(n_games)).fold((0usize, 0u64), |(w, t), i| {
                let (won, n) = play_coin_game(stake_a, stake_b, &mut SeededRng::new(seed, i as u64));
                (w + won as usize, t + n)
            })
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold((0, 0), |(w, t), (pw, pt)| (w + pw, t + pt));
    let f = wins_a as f64 / n_games as f64;
    Ok(CoinGameSummary {
        stake_a,
        stake_b,
        n_games,
        wins_a,
        win_frequency_a: f,
        std_error: (f * (1.0 - f) / n_games as f64).sqrt(),
        mean_tosses: tosses as f64 / n_games as f64,
    })
}

/// Amplitude version of the game: the state `sqrt(p) |0> + sqrt(1 - p) |1>`
/// with `p = stake_a / (stake_a + stake_b)` collapsing under
/// `A = diag(0, 1)`. Branch 0 is the first gambler.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QuantumGame {
    pub stake_a: f64,
    pub stake_b: f64,
    pub lambda: f64,
    pub dt: f64,
    pub n_steps: usize,
}

impl QuantumGame {
    pub fn new(stake_a: f64, stake_b: f64) -> Self {
        Self { stake_a, stake_b, lambda: 1.0, dt: 0.05, n_steps: 1000 }
    }

    pub fn initial_state(&self) -> Result<QuantumState> {
        if !(self.stake_a > 0.0 && self.stake_b > 0.0) {
            return Err(CslError::InvalidParameter("stakes must be positive".into()));
        }
        let total = self.stake_a + self.stake_b;
        QuantumState::from_real(&[(self.stake_a / total).sqrt(), (self.stake_b / total).sqrt()])
    }

    pub fn model(&self) -> Result<CslModel> {
        let a = HermitianOperator::from_real_diagonal(&[0.0, 1.0])?;
        CslModel::new(HermitianOperator::zeros(2), vec![a], self.lambda, self.dt, self.n_steps)
    }

    pub fn run(&self, n_traj: usize, seed: u64) -> Result<EnsembleSummary> {
        run_ensemble(&self.initial_state()?, &self.model()?, n_traj, seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coin_game_ends_with_one_winner() {
        let mut rng = SeededRng::new(3, 0);
        for _ in 0..50 {
            let (_, n) = play_coin_game(3, 2, &mut rng);
            assert!(n >= 2);
        }
        assert_eq!(play_coin_game(1, 1, &mut SeededRng::new(0, 0)).1, 1);
    }

    #[test]
    fn coin_game_win_probability_and_duration() {
        let s = coin_game_frequencies(6, 4, 20_000, 11).unwrap();
        assert!((s.win_frequency_a - 0.6).abs() < 4.0 * s.std_error);
        // Expected duration of a fair walk from a to 0 or a + b is a b.
        assert!((s.mean_tosses - 24.0).abs() < 1.0);
    }

    #[test]
    fn coin_game_is_thread_independent() {
        let a = coin_game_frequencies(6, 4, 3000, 5).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| coin_game_frequencies(6, 4, 3000, 5).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn quantum_game_born_frequencies() {
        let g = QuantumGame::new(60.0, 40.0);
        let s = g.run(2000, 1).unwrap();
        assert_eq!(s.uncollapsed, 0);
        let f = s.outcome_frequencies[0];
        assert!((f - 0.6).abs() < 4.0 * (0.24f64 / 2000.0).sqrt(), "{f}");
        // Branch weights are a martingale: their ensemble mean stays put.
        for w in &s.mean_branch_weights {
            assert!((w[0] - 0.6).abs() < 0.05);
        }
    }
}
