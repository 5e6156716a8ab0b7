//! Acceptance checks, one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the report reads top to bottom.
//! Exits non-zero if any criterion fails or overruns its time limit.
//!
//! ```text
//! cargo test -p ttslat-core --test acceptance
//! ```

mod common;

use std::time::{Duration, Instant};

use common::{brute_force_vote, mc_tokens_per_cycle, scan_crossover};
use rand::Rng;
use ttslat_core::planner::{
    greedy_search, grid_search, pareto_frontier, ScenarioObjective, Synthetic, DEFAULT_B_SET, DEFAULT_GAMMA_SET,
};
use ttslat_core::simulator::{write_summary_csv, write_trace_csv};
use ttslat_core::{
    best_gamma, crossover_sequences, evaluate_config, expected_tokens_per_cycle, fixtures, rng, simulate,
    simulate_trace, step_cost, throughput, vote_accuracy_exact, vote_accuracy_mc, AnswerModel, ConcurrencyConfig,
    Crossover, HardwareProfile, ModelProfile, SummaryRow, TieRule, GB,
};

// Tolerances pinned by the acceptance criteria.
const SD_EXPECTED: f64 = 3.968;
const SD_CLOSED_TOL: f64 = 1e-3;
const SD_MC_CYCLES: u64 = 1_000_000;
const SD_MC_ABS: f64 = 0.01;
const VOTE_EXACT_TOL: f64 = 1e-12;
const VOTE_MC_TRIALS: u64 = 100_000;
const SIGMA_4: f64 = 4.0;
const SIGMA_3: f64 = 3.0;
const THROUGHPUT_TARGET: f64 = 22.7;
const THROUGHPUT_TOL: f64 = 0.5;
const FREE_CONCURRENCY_MAX: f64 = 1.10;
const LINEAR_TOL: f64 = 0.01;
const CROSSOVER_PROFILES: usize = 20;
const SCAN_LIMIT: u64 = 1 << 20;
const GREEDY_MAX_EVALS: usize = 10;
const SYNTHETIC_INSTANCES: usize = 100;
const SYNTHETIC_REQUIRED: usize = 95;
const SPEEDUP_BAND: (f64, f64) = (1.4, 1.9);
const SIM_TRIALS: u64 = 10_000;
const SIM_REQUIRED: usize = 53;
const HEADLINE_BUDGET: f64 = 60.0;

struct Outcome {
    pass: bool,
    detail: String,
}

fn run(id: &str, title: &str, limit: Duration, check: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = check();
    let elapsed = start.elapsed();
    let in_time = elapsed <= limit;
    let pass = outcome.pass && in_time;
    let timing = if in_time {
        format!("{:.2}s", elapsed.as_secs_f64())
    } else {
        format!("{:.2}s, limit {}s exceeded", elapsed.as_secs_f64(), limit.as_secs())
    };
    println!(
        "{id} {} {title}: {} [{timing}]",
        if pass { "PASS" } else { "FAIL" },
        outcome.detail
    );
    pass
}

fn ac1() -> Outcome {
    let closed = expected_tokens_per_cycle(0.831, 5).unwrap();
    let mut r = rng::stream(1, 0, 0);
    let (mean, se) = mc_tokens_per_cycle(&mut r, 0.831, 5, SD_MC_CYCLES);
    let diff = (mean - closed).abs();
    Outcome {
        pass: (closed - SD_EXPECTED).abs() < SD_CLOSED_TOL && diff <= SIGMA_4 * se && diff < SD_MC_ABS,
        detail: format!("closed form {closed:.6}, Monte Carlo {mean:.6} (se {se:.2e}, |diff| {diff:.2e})"),
    }
}

fn ac2() -> Outcome {
    let mut worst_exact = 0.0_f64;
    let mut worst_z = 0.0_f64;
    for k in 1..=3 {
        for pi in 1..=9 {
            let p = f64::from(pi) / 10.0;
            let model = AnswerModel::uniform(p, k).unwrap();
            for b in 1..=7 {
                let exact = vote_accuracy_exact(&model, b, TieRule::SplitCredit).unwrap();
                worst_exact = worst_exact.max((exact - brute_force_vote(&model, b, TieRule::SplitCredit)).abs());
                let seed = (k as u64) << 16 | (pi as u64) << 8 | u64::from(b);
                let (est, se) = vote_accuracy_mc(&model, b, TieRule::SplitCredit, VOTE_MC_TRIALS, seed).unwrap();
                if se > 0.0 {
                    worst_z = worst_z.max((est - exact).abs() / se);
                } else if est != exact {
                    worst_z = f64::INFINITY;
                }
            }
        }
    }
    Outcome {
        pass: worst_exact <= VOTE_EXACT_TOL && worst_z <= SIGMA_4,
        detail: format!("189 cells, max |exact - enumeration| {worst_exact:.1e}, max |z| Monte Carlo {worst_z:.2}"),
    }
}

fn ac3() -> Outcome {
    let s = fixtures::s1_32b();
    let target = &s.pair.target;
    let tps = throughput(&s.hardware, target, &ConcurrencyConfig::new(1, 0), 1024.0);
    let ratio = step_cost(&s.hardware, target, 16, 1, 1024.0).step_time
        / step_cost(&s.hardware, target, 1, 1, 1024.0).step_time;
    let weights_ok =
        target.weights_bytes() == 64.0 * GB && (target.kv_bytes_per_token * 1024.0 - 0.25 * GB).abs() < 1e-3;
    let bw = s.hardware.effective_bandwidth();
    Outcome {
        pass: weights_ok && (tps - THROUGHPUT_TARGET).abs() <= THROUGHPUT_TOL && ratio <= FREE_CONCURRENCY_MAX,
        detail: format!(
            "effective bandwidth {bw:.4e} B/s, B=1 throughput {tps:.3} tok/s, step(16)/step(1) = {ratio:.4}"
        ),
    }
}

fn ac4() -> Outcome {
    let mut r = rng::stream(4, 0, 0);
    let mut agree = 0;
    let mut with_crossover = 0;
    let mut worst_linear = 0.0_f64;
    for i in 0..CROSSOVER_PROFILES {
        let hw = HardwareProfile {
            name: format!("random-{i}"),
            mem_bandwidth: r.random_range(1e11..5e12),
            peak_compute: r.random_range(1e13..1e15),
            bandwidth_efficiency: r.random_range(0.3..=1.0),
            compute_efficiency: r.random_range(0.3..=1.0),
            mem_capacity: 1e15,
        };
        let model = ModelProfile::new(
            "random",
            r.random_range(500_000_000..80_000_000_000_u64),
            r.random_range(1e3..3e5),
        );
        let tokens = r.random_range(1..=8_u64);
        let seq_len = r.random_range(0.0..2048.0);
        let scan = scan_crossover(&hw, &model, tokens, seq_len, SCAN_LIMIT);
        let solved = crossover_sequences(&hw, &model, tokens, seq_len);
        let same = match solved {
            Crossover::At(c) if c <= SCAN_LIMIT => scan == Some(c),
            _ => scan.is_none(),
        };
        agree += usize::from(same);
        if let Crossover::At(c) = solved {
            with_crossover += 1;
            for mult in [2_u64, 4, 8] {
                let base = step_cost(&hw, &model, c, tokens, seq_len).step_time;
                let grown = step_cost(&hw, &model, c * mult, tokens, seq_len).step_time;
                worst_linear = worst_linear.max((grown / base / mult as f64 - 1.0).abs());
            }
        }
    }
    Outcome {
        pass: agree == CROSSOVER_PROFILES && worst_linear <= LINEAR_TOL && with_crossover > 0,
        detail: format!(
            "{agree}/{CROSSOVER_PROFILES} profiles match the linear scan ({with_crossover} reach compute bound), max deviation from linear growth {worst_linear:.2e}"
        ),
    }
}

/// Positive sequence with a single peak at `peak`, strictly falling away.
fn unimodal<R: Rng>(r: &mut R, len: usize, peak: usize) -> Vec<f64> {
    let mut v = vec![0.0; len];
    v[peak] = r.random_range(0.6..1.0);
    for i in (0..peak).rev() {
        v[i] = v[i + 1] * r.random_range(0.5..0.98);
    }
    for i in peak + 1..len {
        v[i] = v[i - 1] * r.random_range(0.5..0.98);
    }
    v
}

fn ac5() -> Outcome {
    let mut evals = Vec::new();
    let mut all_within = true;
    for (name, s) in fixtures::all() {
        let r = greedy_search(&ScenarioObjective::new(&s, s.budget), 64, 7).unwrap();
        let grid = grid_search(
            &ScenarioObjective::new(&s, s.budget),
            &DEFAULT_B_SET,
            &DEFAULT_GAMMA_SET,
        )
        .unwrap();
        all_within &= r.evaluations_used <= GREEDY_MAX_EVALS && grid.evaluations_used == 56;
        evals.push(format!("{}={}", name.trim_end_matches(".json"), r.evaluations_used));
    }
    let mut r = rng::stream(5, 0, 0);
    let mut matches = 0;
    for _ in 0..SYNTHETIC_INSTANCES {
        let peak_b = r.random_range(0..7);
        let peak_g = r.random_range(0..8);
        let gb = unimodal(&mut r, 7, peak_b);
        let hg = unimodal(&mut r, 8, peak_g);
        let w = r.random_range(0.0..1.0);
        let obj = Synthetic(move |c: ConcurrencyConfig| {
            let i = c.branches.trailing_zeros() as usize;
            let j = c.draft_len as usize;
            w * gb[i] * hg[j] + (1.0 - w) * 0.5 * (gb[i] + hg[j])
        });
        let greedy = greedy_search(&obj, 64, 7).unwrap();
        let grid = grid_search(&obj, &DEFAULT_B_SET, &DEFAULT_GAMMA_SET).unwrap();
        matches += usize::from(greedy.best.config == grid.best.config);
    }
    Outcome {
        pass: all_within && matches >= SYNTHETIC_REQUIRED,
        detail: format!(
            "greedy evaluations on fixtures [{}] vs 56 for grid; synthetic agreement {matches}/{SYNTHETIC_INSTANCES}",
            evals.join(", ")
        ),
    }
}

fn ac6() -> Outcome {
    let s = fixtures::qwq_32b();
    let (gamma, m) = best_gamma(&s.hardware, &s.pair, 1, 1024.0, 8).unwrap();
    let bound = m.verify.bound;
    Outcome {
        pass: (SPEEDUP_BAND.0..=SPEEDUP_BAND.1).contains(&m.speedup_vs_plain),
        detail: format!(
            "alpha {}, best gamma {gamma}, max speedup {:.4} ({bound} bound verify)",
            s.pair.acceptance_rate, m.speedup_vs_plain
        ),
    }
}

fn ac7() -> Outcome {
    let s = fixtures::s1_32b();
    let mut agree = 0;
    let mut misses = Vec::new();
    for &b in &DEFAULT_B_SET {
        for &g in &DEFAULT_GAMMA_SET {
            let config = ConcurrencyConfig::new(b, g);
            let predicted = evaluate_config(&s, &config, HEADLINE_BUDGET)
                .unwrap()
                .predicted_accuracy;
            let sim = simulate(&s, &config, HEADLINE_BUDGET, SIM_TRIALS, 0).unwrap();
            // standard error under the planner's prediction
            let se = (predicted * (1.0 - predicted) / SIM_TRIALS as f64).sqrt();
            let diff = (sim.accuracy_estimate - predicted).abs();
            if diff <= SIGMA_3 * se || diff == 0.0 {
                agree += 1;
            } else {
                misses.push(format!("({b},{g}) {:.4} vs {predicted:.4}", sim.accuracy_estimate));
            }
        }
    }
    let extra = if misses.is_empty() {
        String::new()
    } else {
        format!("; outside: {}", misses.join(", "))
    };
    Outcome {
        pass: agree >= SIM_REQUIRED,
        detail: format!("{agree}/56 configs within 3 standard errors at {SIM_TRIALS} trials{extra}"),
    }
}

fn ac8() -> Outcome {
    let s = fixtures::s1_32b();
    let anchor = s.curve.eval(11.3_f64.exp2()).unwrap();
    let frontier = pareto_frontier(&s, &[HEADLINE_BUDGET], &DEFAULT_B_SET, &DEFAULT_GAMMA_SET).unwrap();
    let (_, best) = frontier[0];
    let obj = ScenarioObjective::new(&s, HEADLINE_BUDGET);
    let sequential = obj_eval(&obj, 1, 0);
    let parallel = grid_search(&obj, &DEFAULT_B_SET, &[0]).unwrap().best;
    let sequential_best_gamma = grid_search(&obj, &[1], &DEFAULT_GAMMA_SET).unwrap().best;
    let combined = best.config.branches > 1 && best.config.draft_len > 0;
    let dominates = best.predicted_accuracy > sequential.predicted_accuracy
        && best.predicted_accuracy > parallel.predicted_accuracy
        && best.predicted_accuracy > sequential_best_gamma.predicted_accuracy;
    Outcome {
        pass: combined && dominates && (anchor - 0.833).abs() <= 0.005,
        detail: format!(
            "optimum B={} gamma={} acc {:.4} vs sequential {:.4}, parallel B={} {:.4}, best single-branch gamma {} {:.4}",
            best.config.branches,
            best.config.draft_len,
            best.predicted_accuracy,
            sequential.predicted_accuracy,
            parallel.config.branches,
            parallel.predicted_accuracy,
            sequential_best_gamma.config.draft_len,
            sequential_best_gamma.predicted_accuracy,
        ),
    }
}

fn obj_eval(obj: &ScenarioObjective<'_>, b: u32, g: u32) -> ttslat_core::ConfigEvaluation {
    use ttslat_core::Objective;
    obj.evaluate(ConcurrencyConfig::new(b, g)).unwrap()
}

fn render(threads: usize) -> Vec<u8> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    pool.install(|| {
        let mut out = Vec::new();
        for (name, s) in fixtures::all() {
            let config = s.default_config.unwrap_or(ConcurrencyConfig::new(4, 2));
            let budget = s.budget.min(10.0);
            let summary = simulate(&s, &config, budget, 500, 123).unwrap();
            let predicted = evaluate_config(&s, &config, budget).unwrap().predicted_accuracy;
            out.extend_from_slice(name.as_bytes());
            write_summary_csv(
                &mut out,
                &[SummaryRow {
                    config,
                    budget,
                    summary,
                    predicted_accuracy: predicted,
                }],
            )
            .unwrap();
            write_trace_csv(&mut out, &simulate_trace(&s, &config, budget, 123).unwrap()).unwrap();
            let (est, se) =
                vote_accuracy_mc(&s.answer_model.model(0.5), 16, TieRule::SplitCredit, 20_000, 123).unwrap();
            out.extend_from_slice(format!("{est},{se}\n").as_bytes());
        }
        out
    })
}

fn ac9() -> Outcome {
    let first = render(1);
    let again = render(1);
    let threads = rayon::current_num_threads().max(4);
    let parallel = render(threads);
    Outcome {
        pass: first == again && first == parallel,
        detail: format!(
            "{} bytes of CSV identical across reruns and across 1 vs {threads} worker threads",
            first.len()
        ),
    }
}

fn main() {
    let results = [
        run("AC1", "speculative expectation", Duration::from_secs(5), ac1),
        run("AC2", "vote oracle equivalence", Duration::from_secs(30), ac2),
        run("AC3", "roofline calibration", Duration::from_secs(1), ac3),
        run("AC4", "compute-bound transition", Duration::from_secs(10), ac4),
        run("AC5", "greedy vs grid", Duration::from_secs(30), ac5),
        run("AC6", "speculative speedup band", Duration::from_secs(1), ac6),
        run("AC7", "planner-simulator agreement", Duration::from_secs(300), ac7),
        run("AC8", "combined optimum at 60 s", Duration::from_secs(60), ac8),
        run("AC9", "determinism", Duration::from_secs(60), ac9),
    ];
    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
