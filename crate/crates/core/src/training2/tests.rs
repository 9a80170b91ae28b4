use rand::Rng;

use super::*;
use crate::policy::PolicyHyper;
use crate::rng;
use crate::truth::MotifAutomaton;

const CAP: usize = 8;

fn small_policy(seed: u64, scale: f64) -> PolicyParams {
    let hyper = PolicyHyper { hidden: 6, max_gen_len: CAP };
    let mut r = rng::stream(seed, "test/policy");
    let theta = (0..hyper.num_params()).map(|_| r.random_range(-scale..scale)).collect();
    PolicyParams::from_flat(hyper, theta)
}

fn wn_f(n: usize) -> PotentialHandle<'static> {
    PotentialHandle::white_noise_filter(MotifAutomaton::parse("101", n).unwrap(), n)
}

fn valid_set() -> Vec<Sequence> {
    ["101000", "010100", "110111"].iter().map(|s| s.parse().unwrap()).collect()
}

#[test]
fn weight_normalization_is_shift_invariant_and_reports_ess() {
    let log_w = [0.3, -1.2, f64::NEG_INFINITY, 2.0];
    let shifted: Vec<f64> = log_w.iter().map(|l| l + 500.0).collect();
    let (w, log_mean, ess) = normalize_weights(&log_w, 0.0);
    let (ws, log_mean_s, ess_s) = normalize_weights(&shifted, 0.0);
    for (a, b) in w.iter().zip(&ws) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!((log_mean_s - log_mean - 500.0).abs() < 1e-9);
    assert!((ess - ess_s).abs() < 1e-9);
    assert!((w.iter().sum::<f64>() - 4.0).abs() < 1e-12);
    assert_eq!(w[2], 0.0);

    let (flat, _, ess_flat) = normalize_weights(&[1.5; 10], 0.0);
    assert!(flat.iter().all(|v| (v - 1.0).abs() < 1e-15));
    assert!((ess_flat - 10.0).abs() < 1e-12);

    let (capped, _, _) = normalize_weights(&[0.0, 5.0], 1.5);
    assert!(capped.iter().all(|v| *v <= 1.5));

    let (none, log_none, ess_none) = normalize_weights(&[f64::NEG_INFINITY; 3], 0.0);
    assert_eq!(none, vec![0.0; 3]);
    assert_eq!(log_none, f64::NEG_INFINITY);
    assert_eq!(ess_none, 0.0);
}

/// `E_q[(P/q) ∇ log π]` from draws of `q` against `Σ_x P(x) ∇ log π(x)`
/// by enumeration, on a few coordinates.
#[test]
fn off_policy_gradient_matches_enumeration() {
    let n = 6;
    let potential = wn_f(n);
    let q = small_policy(3, 0.5);
    let pi = small_policy(4, 0.5);

    let dim = pi.flat().len();
    let mut exact = vec![0.0; dim];
    for x in Sequence::all_of_length(n) {
        let lp = potential.log_potential(&x);
        if lp == f64::NEG_INFINITY {
            continue;
        }
        let g = pi.grad_logprob(&x);
        for (e, gi) in exact.iter_mut().zip(g.as_slice()) {
            *e += lp.exp() * gi;
        }
    }

    let coords: Vec<usize> = (0..6).map(|k| (k * 37 + 5) % dim).collect();
    let draws = 60_000;
    let mut sum = vec![0.0; coords.len()];
    let mut sum_sq = vec![0.0; coords.len()];
    let mut rng = rng::stream(9, "test/offpolicy");
    for _ in 0..draws {
        let (x, log_q) = q.sample_scored(&mut rng);
        let lp = potential.log_potential(&x);
        if lp == f64::NEG_INFINITY {
            continue;
        }
        let g = pi.grad_logprob(&x);
        let w = (lp - log_q).exp();
        for (k, &c) in coords.iter().enumerate() {
            let v = w * g.as_slice()[c];
            sum[k] += v;
            sum_sq[k] += v * v;
        }
    }
    for (k, &c) in coords.iter().enumerate() {
        let mean = sum[k] / draws as f64;
        let var = sum_sq[k] / draws as f64 - mean * mean;
        let se = (var / draws as f64).sqrt();
        assert!(
            (mean - exact[c]).abs() <= 3.0 * se,
            "coordinate {c}: estimate {mean} vs exact {} (se {se})",
            exact[c]
        );
    }
}

#[test]
fn proportional_potential_gives_flat_weights() {
    let q0 = small_policy(5, 0.6);
    let scale = 3.5f64;
    let q_for_potential = q0.clone();
    let potential = PotentialHandle::new("scaled_q0", move |x| scale.ln() + q_for_potential.sample_logprob(x));
    let config = DpgConfig { iterations: 1, episodes_per_iter: 500, ..DpgConfig::default() };
    let (_, report) = dpg_off(&potential, &q0, &valid_set(), &config, &mut rng::stream(1, "test/flat")).unwrap();
    let rec = &report.iterations[0];
    assert!((rec.mean_weight - scale).abs() < 1e-9, "mean weight {}", rec.mean_weight);
    assert!((rec.ess - 500.0).abs() < 1e-6);
    assert_eq!(rec.zero_weight, 0);
}

#[test]
fn all_zero_potential_leaves_the_policy_unchanged() {
    let theta0 = small_policy(6, 0.6);
    let zero = PotentialHandle::new("zero", |_| f64::NEG_INFINITY);
    let config = DpgConfig { iterations: 2, episodes_per_iter: 128, ..DpgConfig::default() };
    let valid = valid_set();
    let (off, _) = dpg_off(&zero, &theta0, &valid, &config, &mut rng::stream(1, "a")).unwrap();
    let (on, _) = dpg_on(&zero, &theta0, &valid, &config, &mut rng::stream(1, "b")).unwrap();
    let (pg, _) = reinforce_pg(&zero, &theta0, &valid, &config, &mut rng::stream(1, "c")).unwrap();
    assert_eq!(off.flat(), theta0.flat());
    assert_eq!(on.flat(), theta0.flat());
    assert_eq!(pg.flat(), theta0.flat());
}

#[test]
fn training2_is_deterministic_given_the_stream() {
    let theta0 = small_policy(7, 0.6);
    let potential = wn_f(6);
    let config = DpgConfig { iterations: 2, episodes_per_iter: 256, ..DpgConfig::default() };
    let valid = valid_set();
    for method in [Training2Method::DpgOff, Training2Method::DpgOn, Training2Method::Pg] {
        let run = || {
            let mut r = rng::stream(11, "test/det");
            match method {
                Training2Method::DpgOff => dpg_off(&potential, &theta0, &valid, &config, &mut r),
                Training2Method::DpgOn => dpg_on(&potential, &theta0, &valid, &config, &mut r),
                _ => reinforce_pg(&potential, &theta0, &valid, &config, &mut r),
            }
            .unwrap()
        };
        let (a, ra) = run();
        let (b, rb) = run();
        assert_eq!(a.flat(), b.flat(), "{method}");
        assert_eq!(ra.best_ce_v, rb.best_ce_v);
    }
}

#[test]
fn dpg_off_lowers_validation_cross_entropy() {
    let n = 6;
    let potential = wn_f(n);
    let table = crate::truth::CompletionTable::for_motif("101", n).unwrap();
    let mut vr = rng::stream(2, "test/valid");
    let valid: Vec<Sequence> = (0..200).map(|_| table.sample(&mut vr)).collect();
    let theta0 = PolicyParams::init(PolicyHyper { hidden: 8, max_gen_len: CAP }, &mut rng::stream(2, "init"));
    let before = valid_ce(&theta0, &valid);
    let config = DpgConfig { iterations: 6, episodes_per_iter: 2000, learning_rate: 0.05, ..DpgConfig::default() };
    let (pi, report) = dpg_off(&potential, &theta0, &valid, &config, &mut rng::stream(2, "dpg")).unwrap();
    let after = valid_ce(&pi, &valid);
    assert!(after < before - 0.1, "CE(V) {before} -> {after}");
    assert!(report.swaps >= 1);
    assert_eq!(report.best_ce_v, after);
}

#[test]
fn collapse_diagnostics_of_a_constant_sampler() {
    struct Constant(Sequence);
    impl SequenceSampler for Constant {
        fn sample<R: Rng + ?Sized>(&self, _rng: &mut R) -> Sequence {
            self.0.clone()
        }
    }
    let d = CollapseDiagnostics::measure(&Constant("10".parse().unwrap()), 50, &mut rng::stream(0, "c"));
    assert_eq!(d, CollapseDiagnostics { mean_length: 2.0, distinct: 1, samples: 50 });
}

#[test]
fn method_names_roundtrip() {
    for m in Training2Method::ALL {
        assert_eq!(m.name().parse::<Training2Method>().unwrap(), m);
    }
    assert_eq!("dpg".parse::<Training2Method>().unwrap(), Training2Method::DpgOff);
    assert!("ppo".parse::<Training2Method>().unwrap_err().is_config());
}
