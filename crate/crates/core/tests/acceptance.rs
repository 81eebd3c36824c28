//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Usage: `cargo test -p msenkf-core --test acceptance -- [ids...] [--strict]`
//! where ids select criteria (e.g. `1 5 8`). With `--strict` (or
//! `ACCEPTANCE_STRICT=1`) any failure gives a non-zero exit status.

use std::sync::Arc;
use std::time::Instant;

use msenkf_core::scenario::{build_homogenized_map, effective_map, ModelErrorMode, Preset};
use msenkf_core::study::{
    bayes_linear_study, fem_rate_study, hoeffding_study, homogenization_rate_study, laminate_study, lemma_suite,
    mcdiarmid_study, wasserstein_study, CoverageSetup, LEMMA_NAMES,
};
use msenkf_core::{
    ensemble_norm, wasserstein_discrete, DiscreteMeasure, EffectiveMap, ForwardChoice, Problem, RangePolicy,
    ScenarioConfig, SeedStream, StreamTag,
};
use nalgebra::DVector;
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

type Criterion = fn() -> Outcome;

fn sci(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn desk_map(cfg: &ScenarioConfig) -> Arc<EffectiveMap> {
    let table = build_homogenized_map(cfg, 128, 41).expect("table");
    Arc::new(effective_map(table, RangePolicy::Extend, 128).expect("map"))
}

fn fem_order() -> Outcome {
    let r = fem_rate_study(&[8, 16, 32, 64]).expect("fem study");
    Outcome {
        pass: (1.8..=2.2).contains(&r.slope),
        detail: format!("L2 errors {}, rate {:.4} (need [1.8, 2.2])", sci(&r.errors), r.slope),
    }
}

fn laminate() -> Outcome {
    let (a, exact) = laminate_study(128).expect("cell solve");
    let err = (a.a11 - exact.a11).abs().max((a.a22 - exact.a22).abs()).max(a.a12.abs());
    Outcome {
        pass: err <= 1e-4,
        detail: format!(
            "A0 = [{:.8}, {:.2e}; {:.8}] vs [{:.8}, 0; {:.8}], max error {err:.2e} (need ≤ 1e-4)",
            a.a11, a.a12, a.a22, exact.a11, exact.a22
        ),
    }
}

fn homogenization_trend() -> Outcome {
    let cfg = ScenarioConfig::preset(Preset::Desk);
    let r = homogenization_rate_study(&cfg, &[0.25, 0.125, 0.0625], desk_map(&cfg)).expect("study");
    let monotone = r.errors.windows(2).all(|w| w[1] < w[0]);
    Outcome {
        pass: monotone && r.slope >= 0.7,
        detail: format!("e(ε) = {} for ε = 1/4, 1/8, 1/16; slope {:.3} (need ≥ 0.7, decreasing)", sci(&r.errors), r.slope),
    }
}

fn linear_gaussian() -> Outcome {
    let r = bayes_linear_study(10_000, 10, 7).expect("enkf");
    Outcome {
        pass: r.passed(),
        detail: format!(
            "J = 1e4: max |mean − m|/(σ/√J) = {:.3} (need ≤ 5), covariance rel. Frobenius error {:.4} (need ≤ 0.1)",
            r.max_mean_z, r.cov_relative_error
        ),
    }
}

/// Brute force over all permutations; optimal for uniform equal-size measures.
fn permutation_oracle(a: &[DVector<f64>], b: &[DVector<f64>], p: f64) -> f64 {
    fn rec(k: usize, perm: &mut Vec<usize>, used: &mut [bool], cost: &[Vec<f64>], acc: f64, best: &mut f64) {
        if k == perm.capacity() {
            *best = best.min(acc);
            return;
        }
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                perm.push(j);
                rec(k + 1, perm, used, cost, acc + cost[k][j], best);
                perm.pop();
                used[j] = false;
            }
        }
    }
    let n = a.len();
    let cost: Vec<Vec<f64>> = a.iter().map(|x| b.iter().map(|y| (x - y).norm().powf(p)).collect()).collect();
    let mut best = f64::INFINITY;
    rec(0, &mut Vec::with_capacity(n), &mut vec![false; n], &cost, 0.0, &mut best);
    (best / n as f64).powf(1.0 / p)
}

fn wasserstein() -> Outcome {
    let r = wasserstein_study(1000, 11, 1e-9).expect("study");
    let stream = SeedStream::new(12, StreamTag::Study);
    let mut worst = 0f64;
    let mut checked = 0;
    for j in 1..=6 {
        for rep in 0..40 {
            let mut rng = stream.rng(&[j, rep]);
            let m = rng.random_range(1..=4);
            let draw = |rng: &mut msenkf_core::rng::StreamRng| {
                (0..j).map(|_| DVector::from_fn(m, |_, _| rng.random_range(-2.0..2.0))).collect::<Vec<_>>()
            };
            let (a, b) = (draw(&mut rng), draw(&mut rng));
            for p in [1.0, 2.0] {
                let lp = wasserstein_discrete(
                    &DiscreteMeasure::uniform(a.clone()).unwrap(),
                    &DiscreteMeasure::uniform(b.clone()).unwrap(),
                    p,
                    2.0,
                )
                .unwrap();
                let oracle = permutation_oracle(&a, &b, p);
                worst = worst.max((lp - oracle).abs() / oracle.max(1e-300));
                checked += 1;
            }
        }
    }
    Outcome {
        pass: r.violations == 0 && worst <= 1e-12,
        detail: format!(
            "{} pairs, {} violations (max W − bound {:.2e}); {checked} oracle cases J ≤ 6, max rel. deviation {worst:.1e}",
            r.pairs, r.violations, r.max_excess
        ),
    }
}

fn lemmas() -> Outcome {
    let r = lemma_suite(500, 13).expect("suite");
    let parts: Vec<String> = LEMMA_NAMES
        .iter()
        .zip(r.violations.iter().zip(&r.max_ratio))
        .map(|(n, (v, q))| format!("{n}: {v} viol., max ratio {q:.3}"))
        .collect();
    Outcome {
        pass: r.violations.iter().all(|&v| v == 0),
        detail: format!("{} instances; {}", r.instances, parts.join("; ")),
    }
}

fn concentration() -> Outcome {
    let setup = CoverageSetup::default();
    let mean = hoeffding_study(&setup, 36, 14).expect("mean study");
    let cov = mcdiarmid_study(&setup, 3, 15).expect("covariance study");
    Outcome {
        pass: mean.passed() && cov.passed(),
        detail: format!(
            "mean: L = {}, N_E = {}, coverage {:.3}; covariance: L = {}, N_E = {}, coverage {:.3} (need ≥ {:.1})",
            mean.l,
            mean.samples,
            mean.coverage(),
            cov.l,
            cov.samples,
            cov.coverage(),
            1.0 - setup.alpha
        ),
    }
}

fn desk_reproduction() -> Outcome {
    let base = ScenarioConfig::preset(Preset::Desk);
    let map = desk_map(&base);
    let run = |cfg: ScenarioConfig| -> f64 {
        let p = Problem::with_map(cfg, map.clone()).expect("problem");
        let y = p.observations(false).expect("data").y;
        p.invert(&y, ForwardChoice::Surrogate).expect("inversion").relative_error()
    };
    let by_j: Vec<f64> = [10, 100, 200]
        .iter()
        .map(|&j| run(ScenarioConfig { j, ..base.clone() }))
        .collect();
    let coarse = ScenarioConfig {
        epsilon: 0.25,
        ..base.clone()
    };
    let none = run(coarse.clone());
    let offline = run(ScenarioConfig {
        model_error: ModelErrorMode::Offline,
        n_e: 20,
        ..coarse.clone()
    });
    let online = run(ScenarioConfig {
        model_error: ModelErrorMode::Online,
        n_e: 20,
        levels: 5,
        ..coarse
    });
    let a = by_j.windows(2).all(|w| w[1] < w[0]);
    let b = none > offline;
    let c = online <= 1.05 * offline;
    let mark = |ok: bool| if ok { "ok" } else { "FAIL" };
    Outcome {
        pass: a && b && c,
        detail: format!(
            "(a) {} errors J=10/100/200: {:.4}/{:.4}/{:.4}; (b) {} ε=1/4 none {none:.4} vs offline {offline:.4}; \
             (c) {} online {online:.4} vs 1.05·offline {:.4}",
            mark(a),
            by_j[0],
            by_j[1],
            by_j[2],
            mark(b),
            mark(c),
            1.05 * offline
        ),
    }
}

fn ensemble_convergence() -> Outcome {
    let base = ScenarioConfig {
        j: 50,
        n: 20,
        ..ScenarioConfig::preset(Preset::Desk)
    };
    let map = desk_map(&base);
    let eps = [0.25, 0.125, 0.0625];
    let means: Vec<f64> = eps
        .iter()
        .map(|&e| {
            (1..=5u64)
                .map(|seed| {
                    let cfg = ScenarioConfig {
                        epsilon: e,
                        h_obs: e / 16.0,
                        seed,
                        ..base.clone()
                    };
                    let p = Problem::with_map(cfg, map.clone()).expect("problem");
                    let y = p.observations(false).expect("data").y;
                    let fine = p.invert(&y, ForwardChoice::Multiscale).expect("multiscale run");
                    let hom = p.invert(&y, ForwardChoice::Surrogate).expect("surrogate run");
                    ensemble_norm(&fine.output.ensemble, &hom.output.ensemble).expect("norm")
                })
                .sum::<f64>()
                / 5.0
        })
        .collect();
    Outcome {
        pass: means.windows(2).all(|w| w[1] < w[0]),
        detail: format!("mean ‖u^ε − u^0‖ over 5 seeds for ε = 1/4, 1/8, 1/16: {means:.4?} (need decreasing)"),
    }
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let strict = args.iter().any(|a| a == "--strict")
        || std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let selected: Vec<&str> = args.iter().filter(|a| !a.starts_with('-')).map(String::as_str).collect();
    let criteria: [(&str, &str, Criterion); 9] = [
        ("1", "fem_order", fem_order),
        ("2", "laminate_homogenization", laminate),
        ("3", "homogenization_error_trend", homogenization_trend),
        ("4", "linear_gaussian_posterior", linear_gaussian),
        ("5", "wasserstein_bound", wasserstein),
        ("6", "covariance_lemmas", lemmas),
        ("7", "concentration_coverage", concentration),
        ("8", "desk_reproduction", desk_reproduction),
        ("9", "ensemble_convergence", ensemble_convergence),
    ];
    let mut failed = 0;
    let mut ran = 0;
    for (id, name, f) in criteria {
        if !selected.is_empty() && !selected.contains(&id) && !selected.contains(&name) {
            continue;
        }
        let t = Instant::now();
        let o = f();
        ran += 1;
        if !o.pass {
            failed += 1;
        }
        println!(
            "{} [{id}] {name}: {} ({:.1} s)",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if strict && failed > 0 {
        std::process::exit(1);
    }
}
