use super::*;
use crate::ebm::GamPotential;
use crate::features::FeatureSet;
use crate::policy::{PolicyHyper, PolicyParams};
use crate::rng;
use crate::truth::CompletionTable;

fn seqs(items: &[&str]) -> Vec<Sequence> {
    items.iter().map(|s| s.parse().unwrap()).collect()
}

fn summary(method: &str, d: usize, seed: u64, ce_pi: f64, mtf_pi: f64) -> RunSummary {
    RunSummary {
        motif: "101".into(),
        mask: "1001111".into(),
        d,
        seed,
        method: method.into(),
        h_tok: 0.5,
        ce_r: 0.8,
        ce_pi,
        ce_plambda: 0.6,
        ce_plambda_se: 0.001,
        mtf_r: 0.01,
        mtf_pi,
        log_z: -2.0,
        log_z_se: 0.01,
    }
}

#[test]
fn uniform_policy_costs_ln3_per_token() {
    let uniform = PolicyParams::uniform(PolicyHyper { hidden: 4, max_gen_len: 20 });
    let ce = cross_entropy(&seqs(&["", "1", "0101", "111000111"]), &uniform).unwrap();
    assert!((ce.per_token - 3f64.ln()).abs() < 1e-12);
    // 1 + 2 + 5 + 10 tokens over 4 sequences.
    assert!((ce.per_sequence - 18.0 * 3f64.ln() / 4.0).abs() < 1e-12);
}

#[test]
fn empty_test_set_is_an_error() {
    let uniform = PolicyParams::uniform(PolicyHyper { hidden: 4, max_gen_len: 20 });
    assert!(matches!(cross_entropy(&[], &uniform), Err(GamError::EmptyDataset(_))));
}

#[test]
fn shards_combine_by_token_weights() {
    let model = PolicyParams::init(PolicyHyper { hidden: 5, max_gen_len: 12 }, &mut rng::stream(1, "m"));
    let a = seqs(&["10", "0001", "111"]);
    let b = seqs(&["1", "0101010101"]);
    let all: Vec<Sequence> = a.iter().chain(&b).cloned().collect();
    let tok = |s: &[Sequence]| s.iter().map(|x| x.tokens()).sum::<usize>() as f64;
    let ca = cross_entropy(&a, &model).unwrap().per_token;
    let cb = cross_entropy(&b, &model).unwrap().per_token;
    let whole = cross_entropy(&all, &model).unwrap().per_token;
    let combined = (ca * tok(&a) + cb * tok(&b)) / (tok(&a) + tok(&b));
    assert!((whole - combined).abs() < 1e-12);
}

#[test]
fn ratios_do_not_depend_on_units() {
    let test = seqs(&["1010", "0", "110011", "1"]);
    let p = PolicyParams::init(PolicyHyper { hidden: 5, max_gen_len: 12 }, &mut rng::stream(2, "p"));
    let q = PolicyParams::init(PolicyHyper { hidden: 5, max_gen_len: 12 }, &mut rng::stream(3, "q"));
    let (cp, cq) = (cross_entropy(&test, &p).unwrap(), cross_entropy(&test, &q).unwrap());
    let nats_per_token = cp.per_token / cq.per_token;
    let bits_per_sequence = (cp.per_sequence / 2f64.ln()) / (cq.per_sequence / 2f64.ln());
    assert!((nats_per_token - bits_per_sequence).abs() < 1e-12);
}

#[test]
fn motif_frequency_of_the_filtered_process_is_one() {
    let table = CompletionTable::for_motif("101", 8).unwrap();
    assert_eq!(motif_frequency(&table, &[1, 0, 1], 300, &mut rng::stream(1, "f")).unwrap(), 1.0);
    assert!(motif_frequency(&table, &[1, 0, 1], 0, &mut rng::stream(1, "f")).is_err());
}

#[test]
fn plambda_cross_entropy_at_zero_lambda_is_that_of_r() {
    let r = PolicyParams::init(PolicyHyper { hidden: 5, max_gen_len: 12 }, &mut rng::stream(4, "r"));
    let fs = FeatureSet::new("1001111".parse().unwrap(), &[1, 0, 1], 12);
    let gp = GamPotential::neutral(r.clone(), fs);
    let test = seqs(&["101", "0000", "1101011"]);
    let (ce, se) = ce_of_plambda(&test, &gp, &LogZEstimate { log_z: 0.0, stderr: 0.3 }).unwrap();
    assert!((ce - cross_entropy(&test, &r).unwrap().per_token).abs() < 1e-12);
    // 3 sequences over 4 + 5 + 8 tokens.
    assert!((se - 0.3 * 3.0 / 17.0).abs() < 1e-15);
}

#[test]
fn identical_methods_give_unit_ratios() {
    let rows = vec![summary("dpg_off", 500, 1, 0.6, 0.4), summary("distill", 500, 1, 0.6, 0.4)];
    let table = ratio_table(&rows, "dpg_off", "distill");
    let row = table.row(500).unwrap();
    assert_eq!(row.runs, 1);
    assert_eq!(row.mean[RatioTable::column("ce_dpg_dis").unwrap()], 1.0);
    assert_eq!(row.mean[RatioTable::column("mtf_dpg_dis").unwrap()], 1.0);
    assert_eq!(row.sd, [0.0; 7]);
    assert!(table.unpaired.is_empty());
}

#[test]
fn ratio_table_groups_by_size_and_reports_sample_sd() {
    let rows = vec![
        summary("dpg_off", 500, 1, 0.6, 0.4),
        summary("distill", 500, 1, 0.5, 0.4),
        summary("dpg_off", 500, 2, 0.8, 0.4),
        summary("distill", 500, 2, 0.5, 0.4),
        summary("dpg_off", 1000, 1, 0.6, 0.2),
        summary("distill", 1000, 1, 0.6, 0.0),
        summary("distill", 1000, 2, 0.6, 0.3),
        summary("pg", 500, 1, 3.0, 0.0),
    ];
    let table = ratio_table(&rows, "dpg_off", "distill");
    assert_eq!(table.rows.len(), 2);
    let r500 = table.row(500).unwrap();
    let c = RatioTable::column("ce_dpg_dis").unwrap();
    assert!((r500.mean[c] - 1.4).abs() < 1e-12);
    assert!((r500.sd[c] - (0.08f64).sqrt()).abs() < 1e-12);
    let h = RatioTable::column("ce_dpg_H").unwrap();
    assert!((r500.mean[h] - 1.4).abs() < 1e-12);

    // A zero distill motif frequency drops that run from the mtf ratio only.
    let r1000 = table.row(1000).unwrap();
    let m = RatioTable::column("mtf_dpg_dis").unwrap();
    assert_eq!(r1000.counts[m], 0);
    assert!(r1000.mean[m].is_nan());
    assert_eq!(r1000.counts[c], 1);
    assert_eq!(table.unpaired.len(), 1);
    assert!(table.unpaired[0].contains("seed=2"));
}

#[test]
fn runs_csv_roundtrip() {
    let rows = vec![summary("dpg_off", 500, 1234, 0.61234567891, 0.4), summary("distill", 20000, 4444, 0.5, 1e-4)];
    let mut buf = Vec::new();
    write_runs(&mut buf, &rows).unwrap();
    assert!(String::from_utf8_lossy(&buf).starts_with(RUNS_HEADER));
    assert_eq!(read_runs(buf.as_slice()).unwrap(), rows);
    assert!(read_runs("motif,D\n".as_bytes()).is_err());
    assert!(RunSummary::parse_csv_row("a,b,c").is_err());
}

#[test]
fn ratio_csv_has_one_line_per_size() {
    let rows = vec![summary("dpg_off", 500, 1, 0.6, 0.4), summary("distill", 500, 1, 0.6, 0.4)];
    let mut buf = Vec::new();
    ratio_table(&rows, "dpg_off", "distill").write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("D,runs,ce_dpg_dis"));
    assert_eq!(lines[1].split(',').count(), 16);
}
