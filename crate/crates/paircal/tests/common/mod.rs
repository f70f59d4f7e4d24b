//! Independent oracles for the acceptance suite. These deliberately
//! re-derive quantities through different algorithms than the library:
//! a spigot computation for the digits of pi and plain value iteration
//! for the Frozen Lake experts.

/// Rabinowitz-Wagon spigot: streams decimal digits of pi (including the
/// leading 3) without big-number arithmetic.
pub fn spigot_pi_digits(n_digits: usize) -> Vec<u8> {
    // Produce some slack digits because the final predigit group is never
    // flushed.
    let target = n_digits + 16;
    let len = target * 10 / 3 + 1;
    let mut a = vec![2u64; len];
    let mut out: Vec<u8> = Vec::with_capacity(target);
    let mut predigit: u64 = 0;
    let mut nines: usize = 0;
    let mut first = true;

    for _ in 0..target {
        let mut q: u64 = 0;
        for i in (0..len).rev() {
            let x = 10 * a[i] + q * (i as u64 + 1);
            a[i] = x % (2 * i as u64 + 1);
            q = x / (2 * i as u64 + 1);
        }
        a[0] = q % 10;
        q /= 10;
        if q == 9 {
            nines += 1;
        } else if q == 10 {
            out.push((predigit + 1) as u8);
            out.extend(std::iter::repeat_n(0u8, nines));
            predigit = 0;
            nines = 0;
        } else {
            if !first {
                out.push(predigit as u8);
            }
            first = false;
            out.extend(std::iter::repeat_n(9u8, nines));
            nines = 0;
            predigit = q;
        }
    }
    out.truncate(n_digits);
    out
}

pub mod lake_oracle {
    //! Plain value iteration `V(s) = tau * lse_a((r(s,a) + gamma V(s')) / tau)`
    //! followed by a one-shot softmax policy extraction. Shares no code
    //! with the library's Q-iteration solver.

    use paircal::tasks::lake::{lake_cells, reward, Action, Cell, ACTIONS, DISCOUNT, GOAL, GRID, TEMPERATURE};

    fn lse_scaled(values: &[f64], tau: f64) -> f64 {
        let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        m + tau * values.iter().map(|v| ((v - m) / tau).exp()).sum::<f64>().ln()
    }

    /// `probs[state][action]` for the expert avoiding `patch`.
    pub fn solve_policy(patch: Cell) -> Vec<[f64; 4]> {
        let legal = |s: Cell, a: Action| -> Option<Cell> {
            let next = a.apply(s)?;
            (next != patch).then_some(next)
        };
        let idx = |c: Cell| c.row * GRID + c.col;
        let mut v = vec![0.0_f64; GRID * GRID];
        for _ in 0..100_000 {
            let mut delta = 0.0_f64;
            let mut next_v = v.clone();
            for row in 0..GRID {
                for col in 0..GRID {
                    let s = Cell { row, col };
                    if s == GOAL {
                        continue;
                    }
                    let qs: Vec<f64> = ACTIONS
                        .iter()
                        .filter_map(|&a| {
                            let t = legal(s, a)?;
                            let future = if t == GOAL { 0.0 } else { v[idx(t)] };
                            Some(reward(t) + DISCOUNT * future)
                        })
                        .collect();
                    let new = lse_scaled(&qs, TEMPERATURE);
                    delta = delta.max((new - v[idx(s)]).abs());
                    next_v[idx(s)] = new;
                }
            }
            v = next_v;
            if delta < 1e-13 {
                break;
            }
        }
        let mut probs = vec![[0.0_f64; 4]; GRID * GRID];
        for row in 0..GRID {
            for col in 0..GRID {
                let s = Cell { row, col };
                if s == GOAL {
                    continue;
                }
                let qs: Vec<(usize, f64)> = ACTIONS
                    .iter()
                    .enumerate()
                    .filter_map(|(ai, &a)| {
                        let t = legal(s, a)?;
                        let future = if t == GOAL { 0.0 } else { v[idx(t)] };
                        Some((ai, reward(t) + DISCOUNT * future))
                    })
                    .collect();
                let vals: Vec<f64> = qs.iter().map(|(_, q)| *q).collect();
                let lse = lse_scaled(&vals, TEMPERATURE);
                for (ai, q) in qs {
                    probs[idx(s)][ai] = ((q - lse) / TEMPERATURE).exp();
                }
            }
        }
        probs
    }

    /// Max absolute action-probability difference between the library's
    /// soft-Q policy and this oracle, across all patches and states.
    pub fn max_policy_gap() -> f64 {
        let mut worst = 0.0_f64;
        for &patch in &lake_cells() {
            let lib = paircal::tasks::lake::solve_expert(patch).expect("solver converges");
            let oracle = solve_policy(patch);
            for row in 0..GRID {
                for col in 0..GRID {
                    let s = Cell { row, col };
                    if s == GOAL {
                        continue;
                    }
                    let a = lib.action_probs(s);
                    let b = &oracle[s.row * GRID + s.col];
                    for i in 0..4 {
                        worst = worst.max((a[i] - b[i]).abs());
                    }
                }
            }
        }
        worst
    }
}
